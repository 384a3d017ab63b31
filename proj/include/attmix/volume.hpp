#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace attmix {

// 3D scalar grid, row-major with D outermost.
struct Volume {
  std::array<std::size_t, 3> dims{};    // D, H, W
  std::array<float, 3> spacing{1, 1, 1};  // mm per voxel along D, H, W
  std::vector<float> voxels;

  Volume() = default;
  Volume(std::array<std::size_t, 3> dims, std::vector<float> voxels,
         std::array<float, 3> spacing = {1, 1, 1});

  std::size_t size() const { return voxels.size(); }
  float& at(std::size_t d, std::size_t h, std::size_t w) {
    return voxels[(d * dims[1] + h) * dims[2] + w];
  }
  float at(std::size_t d, std::size_t h, std::size_t w) const {
    return voxels[(d * dims[1] + h) * dims[2] + w];
  }
};

// Linear-interpolation percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

// Trilinear resampling onto a target_side^3 grid with isotropic spacing.
// The grid spans the largest physical extent of the source, centred;
// samples that fall outside a shorter axis are clamped to its edge.
Volume resample_volume(const Volume& v, std::size_t target_side);

// Clamp to the per-scan [p1, p99] span and map it linearly onto [0, 1].
// A degenerate span (p99 == p1) yields all zeros.
Volume clip_normalize(const Volume& v);

// ".vol" files: "AMV1" | u16 version | u8 dtype (1 = f32) | u8 reserved |
// D, H, W as u32 | spacing as 3 x f32 | payload. All little-endian.
inline constexpr std::uint16_t kVolumeVersion = 1;

void save_volume(const std::filesystem::path& path, const Volume& v);
Volume load_volume(const std::filesystem::path& path);

std::vector<char> encode_volume(const Volume& v);
Volume decode_volume(const std::vector<char>& bytes);

}  // namespace attmix
