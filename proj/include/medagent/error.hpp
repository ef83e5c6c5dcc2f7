#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace medagent {

enum class Errc {
  MalformedHeader,
  DimensionOverflow,
  UnsupportedDatatype,
  IoError,
  InvalidArgument,
  KTooLarge,
  EmptyMask,
  DimsMismatch,
  AllOrgansEmpty,
  DanglingEvidenceRef,
  TurnNotIncreasing,
  DuplicateRank,
  SliceNeverAttached,
  NoLesions,
  EmptyLesion,
  NoNormalTissue,
  EmptyLung,
  EmptyRegion,
  CohortTooSmall,
  DegenerateCohort,
  DimMismatch,
  ZeroTextEmbedding,
  InvalidRange,
  EmptyProjection,
  NoCandidates,
  ClientUnavailable,
  ResponseUnparseable,
  SliceOutOfRange,
  MissingRoi,
  UnknownRegion,
  DistractorCollision,
  AmbiguousPhenotype,
  InsufficientSupply,
  UnknownSubtype,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure surfaced by the library carries one of the Errc codes so
/// callers (and the CLI) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code name.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace medagent
