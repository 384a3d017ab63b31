#include "attmix/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attmix/error.hpp"
#include "attmix/io.hpp"

namespace attmix {
namespace {

constexpr char kMagic[4] = {'A', 'M', 'V', '1'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 1 + 3 * 4 + 3 * 4;

}  // namespace

Volume::Volume(std::array<std::size_t, 3> d, std::vector<float> v, std::array<float, 3> s)
    : dims(d), spacing(s), voxels(std::move(v)) {
  for (std::size_t e : dims) {
    if (e == 0) throw DimensionError("volume extents must be positive");
  }
  for (float sp : spacing) {
    if (!(sp > 0.0f) || !std::isfinite(sp)) throw ValidationError("volume spacing must be positive");
  }
  if (dims[0] * dims[1] * dims[2] != voxels.size()) {
    throw DimensionError("volume dims " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                          "x" + std::to_string(dims[2]) + " do not match " +
                          std::to_string(voxels.size()) + " voxels");
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Volume resample_volume(const Volume& v, std::size_t target_side) {
  if (target_side < 2) throw ValidationError("resample target side must be at least 2");
  std::array<double, 3> extent{};
  for (int a = 0; a < 3; ++a) {
    if (v.dims[a] < 2) {
      throw ValidationError("cannot resample a volume with a degenerate axis (extent 1)");
    }
    extent[a] = static_cast<double>(v.dims[a] - 1) * v.spacing[a];
  }
  const double span = *std::max_element(extent.begin(), extent.end());
  const double step = span / static_cast<double>(target_side - 1);

  // Source (fractional) index of each target index, per axis.
  std::array<std::vector<double>, 3> coord;
  for (int a = 0; a < 3; ++a) {
    coord[a].resize(target_side);
    for (std::size_t j = 0; j < target_side; ++j) {
      const double phys = -span / 2 + static_cast<double>(j) * step + extent[a] / 2;
      const double idx = phys / v.spacing[a];
      coord[a][j] = std::clamp(idx, 0.0, static_cast<double>(v.dims[a] - 1));
    }
  }

  const auto split = [](double x, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
    i0 = std::min(static_cast<std::size_t>(std::floor(x)), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    t = x - static_cast<double>(i0);
  };

  std::vector<float> out(target_side * target_side * target_side);
  for (std::size_t d = 0; d < target_side; ++d) {
    std::size_t d0, d1;
    double td;
    split(coord[0][d], v.dims[0], d0, d1, td);
    for (std::size_t h = 0; h < target_side; ++h) {
      std::size_t h0, h1;
      double th;
      split(coord[1][h], v.dims[1], h0, h1, th);
      for (std::size_t w = 0; w < target_side; ++w) {
        std::size_t w0, w1;
        double tw;
        split(coord[2][w], v.dims[2], w0, w1, tw);
        const auto lerp_w = [&](std::size_t dd, std::size_t hh) {
          return (1 - tw) * v.at(dd, hh, w0) + tw * v.at(dd, hh, w1);
        };
        const double c0 = (1 - th) * lerp_w(d0, h0) + th * lerp_w(d0, h1);
        const double c1 = (1 - th) * lerp_w(d1, h0) + th * lerp_w(d1, h1);
        out[(d * target_side + h) * target_side + w] = static_cast<float>((1 - td) * c0 + td * c1);
      }
    }
  }
  const auto sp = static_cast<float>(step);
  return Volume({target_side, target_side, target_side}, std::move(out), {sp, sp, sp});
}

Volume clip_normalize(const Volume& v) {
  if (v.voxels.empty()) throw ValidationError("clip_normalize on an empty volume");
  std::vector<double> values(v.voxels.begin(), v.voxels.end());
  std::sort(values.begin(), values.end());
  const auto pct = [&](double q) {
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  const double p1 = pct(1.0), p99 = pct(99.0);
  Volume out = v;
  if (!(p99 > p1)) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
    return out;
  }
  const double span = p99 - p1;
  for (float& x : out.voxels) {
    x = static_cast<float>((std::clamp(static_cast<double>(x), p1, p99) - p1) / span);
  }
  return out;
}

std::vector<char> encode_volume(const Volume& v) {
  std::vector<char> out;
  out.reserve(kHeaderBytes + v.voxels.size() * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, kVolumeVersion);
  put_le<std::uint8_t>(out, kDtypeF32);
  put_le<std::uint8_t>(out, 0);
  for (std::size_t d : v.dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ValidationError("volume extent does not fit the file format");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (float s : v.spacing) put_le<float>(out, s);
  for (float x : v.voxels) put_le<float>(out, x);
  return out;
}

Volume decode_volume(const std::vector<char>& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError("bad magic, expected \"AMV1\"", 0);
  }
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated volume header", bytes.size());
  const char* p = bytes.data();
  const auto version = get_le<std::uint16_t>(p + 4);
  if (version != kVolumeVersion) {
    throw FormatError("unsupported volume version " + std::to_string(version), 4);
  }
  const auto dtype = get_le<std::uint8_t>(p + 6);
  if (dtype != kDtypeF32) throw FormatError("unsupported dtype code " + std::to_string(dtype), 6);
  std::array<std::size_t, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    dims[a] = get_le<std::uint32_t>(p + 8 + 4 * a);
    if (dims[a] == 0) throw FormatError("zero volume extent", 8 + 4 * static_cast<std::size_t>(a));
  }
  std::array<float, 3> spacing{};
  for (int a = 0; a < 3; ++a) {
    spacing[a] = get_le<float>(p + 20 + 4 * a);
    if (!(spacing[a] > 0.0f) || !std::isfinite(spacing[a])) {
      throw FormatError("non-positive spacing", 20 + 4 * static_cast<std::size_t>(a));
    }
  }
  // D*H*W*4 must fit in size_t before comparing against the payload.
  const unsigned __int128 count =
      static_cast<unsigned __int128>(dims[0]) * dims[1] * dims[2];
  if (count * 4 > static_cast<unsigned __int128>(std::numeric_limits<std::size_t>::max() / 2)) {
    throw FormatError("volume dimensions overflow", 8);
  }
  const auto n = static_cast<std::size_t>(count);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (payload < n * 4) {
    throw FormatError("truncated voxel payload: expected " + std::to_string(n) + " voxels, found " +
                          std::to_string(payload / 4),
                      bytes.size());
  }
  if (payload > n * 4) throw FormatError("trailing bytes after voxel payload", kHeaderBytes + n * 4);
  std::vector<float> voxels(n);
  for (std::size_t i = 0; i < n; ++i) voxels[i] = get_le<float>(p + kHeaderBytes + 4 * i);
  return Volume(dims, std::move(voxels), spacing);
}

void save_volume(const std::filesystem::path& path, const Volume& v) {
  const std::vector<char> bytes = encode_volume(v);
  write_file_atomic(path, std::string_view(bytes.data(), bytes.size()));
}

Volume load_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }

}  // namespace attmix
