#pragma once

// Test helpers: small generators and independent reference implementations
// the library results are checked against.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "medagent/cflt.hpp"
#include "medagent/volume.hpp"

namespace testsupport {

using namespace medagent;

struct Gen {
  std::mt19937_64 eng;
  explicit Gen(std::uint64_t seed) : eng(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {  // inclusive
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng);
  }
  bool chance(double p) { return uniform() < p; }
};

inline BinaryMask random_mask(Gen& g, Dims d, double density, Spacing s = {}) {
  std::vector<std::uint8_t> data(d.voxels());
  for (auto& v : data) v = g.chance(density) ? 1 : 0;
  return BinaryMask(d, s, std::move(data));
}

/// Random walk blob of up to `n` voxels starting at the centre.
inline BinaryMask random_blob(Gen& g, Dims d, std::size_t n, Spacing s = {}) {
  std::vector<std::uint8_t> data(d.voxels(), 0);
  std::int64_t x = d.h / 2, y = d.w / 2, z = d.d / 2;
  for (std::size_t k = 0; k < n * 4; ++k) {
    data[d.index(x, y, z)] = 1;
    switch (g.integer(0, 5)) {
      case 0: x = std::min(d.h - 1, x + 1); break;
      case 1: x = std::max<std::int64_t>(0, x - 1); break;
      case 2: y = std::min(d.w - 1, y + 1); break;
      case 3: y = std::max<std::int64_t>(0, y - 1); break;
      case 4: z = std::min(d.d - 1, z + 1); break;
      default: z = std::max<std::int64_t>(0, z - 1); break;
    }
    if (static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)) >= n) break;
  }
  return BinaryMask(d, s, std::move(data));
}

/// Breadth-first flood fill. Components as sorted voxel lists, sorted.
inline std::vector<std::vector<std::size_t>> flood_fill(const BinaryMask& m, int connectivity) {
  const Dims d = m.dims();
  std::vector<char> seen(d.voxels(), 0);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < d.voxels(); ++start) {
    if (!m.data()[start] || seen[start]) continue;
    std::vector<std::size_t> comp;
    std::deque<std::size_t> q{start};
    seen[start] = 1;
    while (!q.empty()) {
      const auto cur = q.front();
      q.pop_front();
      comp.push_back(cur);
      const Voxel v = unravel(d, cur);
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
            if (manhattan == 0 || (connectivity == 6 && manhattan != 1)) continue;
            const auto nx = v.x + dx, ny = v.y + dy, nz = v.z + dz;
            if (!d.contains(nx, ny, nz)) continue;
            const auto ni = d.index(nx, ny, nz);
            if (m.data()[ni] && !seen[ni]) {
              seen[ni] = 1;
              q.push_back(ni);
            }
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Max centre distance over all member pairs on the slice with the most
/// members (lowest z on ties).
inline double diameter_all_pairs(const std::vector<std::size_t>& voxels, Dims d, Spacing s) {
  std::map<std::int64_t, std::vector<Voxel>> by_z;
  for (auto i : voxels) by_z[unravel(d, i).z].push_back(unravel(d, i));
  std::int64_t best_z = -1;
  std::size_t best = 0;
  for (const auto& [z, vs] : by_z) {
    if (vs.size() > best) {
      best = vs.size();
      best_z = z;
    }
  }
  double out = 0.0;
  const auto& vs = by_z[best_z];
  for (std::size_t a = 0; a < vs.size(); ++a) {
    for (std::size_t b = a + 1; b < vs.size(); ++b) {
      const double dx = (vs[a].x - vs[b].x) * s.dx, dy = (vs[a].y - vs[b].y) * s.dy;
      out = std::max(out, std::sqrt(dx * dx + dy * dy));
    }
  }
  return out;
}

inline double naive_cosine(std::span<const float> a, const std::vector<float>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    dot += static_cast<long double>(a[k]) * b[k];
    na += static_cast<long double>(a[k]) * a[k];
    nb += static_cast<long double>(b[k]) * b[k];
  }
  if (na == 0 || nb == 0) return 0.0;
  return static_cast<double>(dot / std::sqrt(na * nb));
}

inline FeatureField random_field(Gen& g, GridDims grid, std::size_t n, Dims voxels) {
  std::vector<float> data(grid.cells() * n);
  for (auto& v : data) v = static_cast<float>(g.uniform(-1.0, 1.0));
  return FeatureField(grid, n, voxels, std::move(data));
}

inline std::vector<float> random_vector(Gen& g, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(g.uniform(-1.0, 1.0));
  return v;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("medagent-test-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

struct Box {
  std::int64_t x0, x1, y0, y1, z0, z1;
};

// Independent floor-division box for cell (i, j, k).
inline Box oracle_box(GridDims g, Dims v, std::int64_t i, std::int64_t j, std::int64_t k) {
  return {i * v.h / g.h, (i + 1) * v.h / g.h, j * v.w / g.w, (j + 1) * v.w / g.w, k * v.d / g.d, (k + 1) * v.d / g.d};
}

inline double oracle_rho(const BinaryMask& organ, const Box& b) {
  std::size_t in = 0, n = 0;
  for (auto z = b.z0; z < b.z1; ++z)
    for (auto y = b.y0; y < b.y1; ++y)
      for (auto x = b.x0; x < b.x1; ++x) {
        ++n;
        in += organ.at(x, y, z);
      }
  return static_cast<double>(in) / static_cast<double>(n);
}

inline bool oracle_hits(const Roi& roi, const Box& b) {
  if (roi.kind == RoiKind::AxialSlice) {
    for (auto z : roi.slices)
      if (z >= b.z0 && z < b.z1) return true;
    return false;
  }
  for (auto z = b.z0; z < b.z1; ++z)
    for (auto y = b.y0; y < b.y1; ++y)
      for (auto x = b.x0; x < b.x1; ++x)
        if (roi.mask.at(x, y, z)) return true;
  return false;
}

inline double oracle_score(const Roi& roi, const Heatmap& h, const BinaryMask& organ, double tau, Dims v) {
  const GridDims g = h.grid;
  double s = 0.0;
  for (std::int64_t k = 0; k < g.d; ++k)
    for (std::int64_t j = 0; j < g.w; ++j)
      for (std::int64_t i = 0; i < g.h; ++i) {
        const Box b = oracle_box(g, v, i, j, k);
        const double hv = h.at(i, j, k);
        if (oracle_hits(roi, b) && hv >= tau) s += oracle_rho(organ, b) * hv;
      }
  return s;
}

// A loopback port with nothing listening on it (bound once, then closed).
inline int closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace testsupport
