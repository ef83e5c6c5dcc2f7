#include "medagent/volume_io.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/util.hpp"

namespace medagent {
namespace fs = std::filesystem;

namespace {

constexpr int kNiftiHeaderSize = 348;
constexpr int kDtUint8 = 2;
constexpr int kDtInt16 = 4;
constexpr int kDtFloat32 = 16;

std::vector<unsigned char> read_all_gz(const fs::path& path) {
  // gzread passes uncompressed files through unchanged
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<unsigned char> buf;
  std::array<unsigned char, 1 << 16> chunk{};
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(f);
      throw Error(Errc::IoError, "read failed: " + path.string());
    }
    if (n == 0) break;
    buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return buf;
}

std::vector<unsigned char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T load_le(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

bool host_is_little() { return std::endian::native == std::endian::little; }

struct Decoded {
  Dims dims;
  Spacing spacing;
  std::vector<double> values;
  std::map<std::uint32_t, std::string> names;
};

void check_dims(std::int64_t h, std::int64_t w, std::int64_t d) {
  for (std::int64_t v : {h, w, d}) {
    if (v < 1) throw Error(Errc::MalformedHeader, fmt::format("invalid dimension {}", v));
    if (v > kMaxDim) throw Error(Errc::DimensionOverflow, fmt::format("dimension {} exceeds {}", v, kMaxDim));
  }
}

Decoded decode_nifti(const fs::path& path) {
  const auto buf = read_all_gz(path);
  if (buf.size() < kNiftiHeaderSize) throw Error(Errc::MalformedHeader, "file shorter than NIfTI header");
  const unsigned char* h = buf.data();

  const char* magic = reinterpret_cast<const char*>(h + 344);
  const bool single = std::memcmp(magic, "n+1\0", 4) == 0;
  const bool pair = std::memcmp(magic, "ni1\0", 4) == 0;
  if (!single && !pair) throw Error(Errc::MalformedHeader, "bad NIfTI magic in " + path.string());

  bool swap = false;
  if (load_le<std::int32_t>(h, false) != kNiftiHeaderSize) {
    swap = true;
    if (load_le<std::int32_t>(h, true) != kNiftiHeaderSize) throw Error(Errc::MalformedHeader, "sizeof_hdr != 348");
  }
  // load_le reads in host order; swapping is relative to host
  auto i16 = [&](int off) { return load_le<std::int16_t>(h + off, swap); };
  auto f32 = [&](int off) { return load_le<float>(h + off, swap); };

  const int ndim = i16(40);
  if (ndim < 1 || ndim > 7) throw Error(Errc::MalformedHeader, fmt::format("dim[0] = {}", ndim));
  std::array<std::int64_t, 3> dim{1, 1, 1};
  for (int i = 0; i < std::min(ndim, 3); ++i) dim[static_cast<std::size_t>(i)] = i16(42 + 2 * i);
  for (int i = 3; i < ndim; ++i) {
    if (i16(42 + 2 * i) > 1) throw Error(Errc::MalformedHeader, "only 3D volumes are supported");
  }
  check_dims(dim[0], dim[1], dim[2]);

  const int datatype = i16(70);
  int bytes = 0;
  switch (datatype) {
    case kDtUint8: bytes = 1; break;
    case kDtInt16: bytes = 2; break;
    case kDtFloat32: bytes = 4; break;
    default: throw Error(Errc::UnsupportedDatatype, fmt::format("NIfTI datatype {}", datatype));
  }

  Spacing sp{std::fabs(f32(80)), std::fabs(f32(84)), std::fabs(f32(88))};
  for (double* s : {&sp.dx, &sp.dy, &sp.dz}) {
    if (!(*s > 0.0) || !std::isfinite(*s)) *s = 1.0;
  }

  double slope = f32(112);
  double inter = f32(116);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;

  Dims dims{dim[0], dim[1], dim[2]};
  const std::size_t n = dims.voxels();

  std::vector<unsigned char> img_buf;
  const unsigned char* data = nullptr;
  std::size_t avail = 0;
  if (single) {
    const auto offset = static_cast<std::size_t>(f32(108));
    if (offset < kNiftiHeaderSize || offset > buf.size()) throw Error(Errc::MalformedHeader, "bad vox_offset");
    data = buf.data() + offset;
    avail = buf.size() - offset;
  } else {
    fs::path img = path;
    img.replace_extension(".img");
    img_buf = read_all_gz(img);
    data = img_buf.data();
    avail = img_buf.size();
  }
  if (avail < n * static_cast<std::size_t>(bytes)) throw Error(Errc::MalformedHeader, "voxel data truncated");

  Decoded out{dims, sp, std::vector<double>(n), {}};
  for (std::size_t i = 0; i < n; ++i) {
    double raw = 0.0;
    const unsigned char* p = data + i * static_cast<std::size_t>(bytes);
    switch (datatype) {
      case kDtUint8: raw = *p; break;
      case kDtInt16: raw = load_le<std::int16_t>(p, swap); break;
      case kDtFloat32: raw = load_le<float>(p, swap); break;
    }
    out.values[i] = raw * slope + inter;
  }
  return out;
}

Decoded decode_raw(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  std::ifstream in(side);
  if (!in) throw Error(Errc::IoError, "missing sidecar " + side.string());
  std::optional<Dims> dims;
  std::optional<Spacing> spacing;
  std::map<std::uint32_t, std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::MalformedHeader, "sidecar line without '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "dims") {
        const auto parts = split_list(val, ',');
        if (parts.size() != 3) throw Error(Errc::MalformedHeader, "dims needs 3 values");
        const std::int64_t h = std::stoll(parts[0]), w = std::stoll(parts[1]), d = std::stoll(parts[2]);
        check_dims(h, w, d);
        dims = Dims{h, w, d};
      } else if (key == "spacing") {
        const auto parts = split_list(val, ',');
        if (parts.size() != 3) throw Error(Errc::MalformedHeader, "spacing needs 3 values");
        spacing = Spacing{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
        if (!(spacing->dx > 0 && spacing->dy > 0 && spacing->dz > 0)) {
          throw Error(Errc::MalformedHeader, "spacing must be positive");
        }
      } else if (key == "labels") {
        names = parse_label_names(val);
      }
    } catch (const std::invalid_argument&) {
      throw Error(Errc::MalformedHeader, "unparseable sidecar value: " + line);
    } catch (const std::out_of_range&) {
      throw Error(Errc::MalformedHeader, "sidecar value out of range: " + line);
    }
  }
  if (!dims || !spacing) throw Error(Errc::MalformedHeader, "sidecar needs dims= and spacing=");

  const auto buf = read_all(path);
  const std::size_t n = dims->voxels();
  if (buf.size() != n * 4) {
    throw Error(Errc::MalformedHeader, fmt::format("raw file has {} bytes, expected {}", buf.size(), n * 4));
  }
  Decoded out{*dims, *spacing, std::vector<double>(n), std::move(names)};
  const bool swap = !host_is_little();
  for (std::size_t i = 0; i < n; ++i) out.values[i] = load_le<float>(buf.data() + 4 * i, swap);
  return out;
}

Decoded decode(const fs::path& path, VolumeFormat format) {
  if (!fs::exists(path)) throw Error(Errc::IoError, "no such file: " + path.string());
  return format == VolumeFormat::Nifti1 ? decode_nifti(path) : decode_raw(path);
}

template <typename T>
void put_le(std::string& s, std::size_t off, T v) {
  if (!host_is_little()) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  std::memcpy(s.data() + off, &v, sizeof(T));
}

std::string raw_bytes(const std::vector<float>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) put_le<float>(bytes, 4 * i, values[i]);
  return bytes;
}

std::string sidecar_text(const Dims& d, const Spacing& s, const std::map<std::uint32_t, std::string>* names) {
  std::string out = fmt::format("dims={},{},{}\nspacing={},{},{}\n", d.h, d.w, d.d, s.dx, s.dy, s.dz);
  if (names != nullptr && !names->empty()) out += "labels=" + format_label_names(*names) + "\n";
  return out;
}

}  // namespace

VolumeFormat format_for_path(const fs::path& path) {
  const std::string name = path.filename().string();
  auto ends_with = [&](std::string_view suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends_with(".nii") || ends_with(".nii.gz") ? VolumeFormat::Nifti1 : VolumeFormat::RawWithSidecar;
}

fs::path sidecar_path(const fs::path& data_path) {
  fs::path p = data_path;
  p += ".sidecar";
  return p;
}

ScalarVolume load_volume(const fs::path& path, VolumeFormat format) {
  Decoded d = decode(path, format);
  std::vector<float> data(d.values.begin(), d.values.end());
  return ScalarVolume(d.dims, d.spacing, std::move(data));
}

ScalarVolume load_volume(const fs::path& path) { return load_volume(path, format_for_path(path)); }

LabelVolume load_labels(const fs::path& path, VolumeFormat format,
                        const std::map<std::uint32_t, std::string>& names) {
  Decoded d = decode(path, format);
  std::vector<std::uint32_t> data(d.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = d.values[i];
    if (!(v >= 0.0) || v != std::floor(v) || v > 4294967295.0) {
      throw Error(Errc::UnsupportedDatatype, fmt::format("non-integer label value {} in {}", v, path.string()));
    }
    data[i] = static_cast<std::uint32_t>(v);
  }
  auto label_names = names.empty() ? std::move(d.names) : names;
  return LabelVolume(d.dims, d.spacing, std::move(data), std::move(label_names));
}

LabelVolume load_labels(const fs::path& path, const std::map<std::uint32_t, std::string>& names) {
  return load_labels(path, format_for_path(path), names);
}

void save_raw(const fs::path& path, const ScalarVolume& v) {
  write_file_atomic(path, raw_bytes(v.data()));
  write_file_atomic(sidecar_path(path), sidecar_text(v.dims(), v.spacing(), nullptr));
}

void save_raw(const fs::path& path, const LabelVolume& v) {
  std::vector<float> values(v.data().begin(), v.data().end());
  write_file_atomic(path, raw_bytes(values));
  write_file_atomic(sidecar_path(path), sidecar_text(v.dims(), v.spacing(), &v.names()));
}

void save_nifti(const fs::path& path, const ScalarVolume& v) {
  std::string hdr(352, '\0');
  put_le<std::int32_t>(hdr, 0, kNiftiHeaderSize);
  const std::int16_t dim[8] = {3,
                               static_cast<std::int16_t>(v.dims().h),
                               static_cast<std::int16_t>(v.dims().w),
                               static_cast<std::int16_t>(v.dims().d),
                               1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_le<std::int16_t>(hdr, 40 + 2 * static_cast<std::size_t>(i), dim[i]);
  put_le<std::int16_t>(hdr, 70, kDtFloat32);
  put_le<std::int16_t>(hdr, 72, 32);
  const float pix[8] = {1.0f,
                        static_cast<float>(v.spacing().dx),
                        static_cast<float>(v.spacing().dy),
                        static_cast<float>(v.spacing().dz),
                        1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put_le<float>(hdr, 76 + 4 * static_cast<std::size_t>(i), pix[i]);
  put_le<float>(hdr, 108, 352.0f);
  put_le<float>(hdr, 112, 1.0f);
  put_le<float>(hdr, 116, 0.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  write_file_atomic(path, hdr + raw_bytes(v.data()));
}

std::map<std::uint32_t, std::string> parse_label_names(const std::string& text) {
  std::map<std::uint32_t, std::string> out;
  for (const auto& part : split_list(text, ';')) {
    if (part.empty()) continue;
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw Error(Errc::MalformedHeader, "label entry without ':': " + part);
    try {
      const auto id = std::stoul(trim(part.substr(0, colon)));
      out[static_cast<std::uint32_t>(id)] = trim(part.substr(colon + 1));
    } catch (const std::logic_error&) {
      throw Error(Errc::MalformedHeader, "bad label id: " + part);
    }
  }
  return out;
}

std::string format_label_names(const std::map<std::uint32_t, std::string>& names) {
  std::string out;
  for (const auto& [id, name] : names) {
    if (!out.empty()) out += ';';
    out += fmt::format("{}:{}", id, name);
  }
  return out;
}

}  // namespace medagent
