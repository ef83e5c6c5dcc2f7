#include "medagent/error.hpp"

namespace medagent {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::DimensionOverflow: return "DimensionOverflow";
    case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
    case Errc::IoError: return "IoError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::DimsMismatch: return "DimsMismatch";
    case Errc::AllOrgansEmpty: return "AllOrgansEmpty";
    case Errc::DanglingEvidenceRef: return "DanglingEvidenceRef";
    case Errc::TurnNotIncreasing: return "TurnNotIncreasing";
    case Errc::DuplicateRank: return "DuplicateRank";
    case Errc::SliceNeverAttached: return "SliceNeverAttached";
    case Errc::NoLesions: return "NoLesions";
    case Errc::EmptyLesion: return "EmptyLesion";
    case Errc::NoNormalTissue: return "NoNormalTissue";
    case Errc::EmptyLung: return "EmptyLung";
    case Errc::EmptyRegion: return "EmptyRegion";
    case Errc::CohortTooSmall: return "CohortTooSmall";
    case Errc::DegenerateCohort: return "DegenerateCohort";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::ZeroTextEmbedding: return "ZeroTextEmbedding";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::EmptyProjection: return "EmptyProjection";
    case Errc::NoCandidates: return "NoCandidates";
    case Errc::ClientUnavailable: return "ClientUnavailable";
    case Errc::ResponseUnparseable: return "ResponseUnparseable";
    case Errc::SliceOutOfRange: return "SliceOutOfRange";
    case Errc::MissingRoi: return "MissingRoi";
    case Errc::UnknownRegion: return "UnknownRegion";
    case Errc::DistractorCollision: return "DistractorCollision";
    case Errc::AmbiguousPhenotype: return "AmbiguousPhenotype";
    case Errc::InsufficientSupply: return "InsufficientSupply";
    case Errc::UnknownSubtype: return "UnknownSubtype";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace medagent
