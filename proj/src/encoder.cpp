#include "attmix/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "attmix/error.hpp"
#include "attmix/rng.hpp"

namespace attmix {

void EncoderConfig::validate() const {
  if (side == 0 || patch == 0 || side % patch != 0) {
    throw ConfigError("encoder patch " + std::to_string(patch) + " must divide side " +
                      std::to_string(side));
  }
  if (d_enc == 0 || heads == 0 || d_enc % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(d_enc) + " must be divisible by heads " +
                      std::to_string(heads));
  }
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in [0, 1)");
  if (d_f == 0 || mlp_ratio == 0) throw ConfigError("d_f and mlp_ratio must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"side", c.side},   {"patch", c.patch},         {"d_enc", c.d_enc},
       {"depth", c.depth}, {"heads", c.heads},         {"mlp_ratio", c.mlp_ratio},
       {"d_f", c.d_f},     {"mask_ratio", c.mask_ratio}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.side = j.value("side", c.side);
  c.patch = j.value("patch", c.patch);
  c.d_enc = j.value("d_enc", c.d_enc);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.d_f = j.value("d_f", c.d_f);
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
}

PatchSequence patchify(const Volume& v, std::size_t patch) {
  if (patch == 0 || v.dims[0] % patch || v.dims[1] % patch || v.dims[2] % patch) {
    throw DimensionError("patch size " + std::to_string(patch) + " does not divide volume " +
                         std::to_string(v.dims[0]) + "x" + std::to_string(v.dims[1]) + "x" +
                         std::to_string(v.dims[2]));
  }
  if (v.dims[0] != v.dims[1] || v.dims[1] != v.dims[2]) {
    throw DimensionError("patchify expects a cubic volume");
  }
  const std::size_t side = v.dims[0], g = side / patch, pv = patch * patch * patch;
  Tensor<float> tokens({g * g * g, pv});
  for (std::size_t bd = 0; bd < g; ++bd) {
    for (std::size_t bh = 0; bh < g; ++bh) {
      for (std::size_t bw = 0; bw < g; ++bw) {
        const std::size_t p = (bd * g + bh) * g + bw;
        std::size_t k = 0;
        for (std::size_t d = 0; d < patch; ++d) {
          for (std::size_t h = 0; h < patch; ++h) {
            for (std::size_t w = 0; w < patch; ++w) {
              tokens[p * pv + k++] = v.at(bd * patch + d, bh * patch + h, bw * patch + w);
            }
          }
        }
      }
    }
  }
  return {side, patch, std::move(tokens)};
}

Volume unpatchify(const PatchSequence& seq) {
  const std::size_t side = seq.side, patch = seq.patch, g = side / patch;
  const std::size_t pv = patch * patch * patch;
  if (seq.tokens.rows() != g * g * g || seq.tokens.cols() != pv) {
    throw DimensionError("unpatchify: token tensor " + shape_str(seq.tokens.shape()) +
                         " does not match the patch grid");
  }
  Volume v({side, side, side}, std::vector<float>(side * side * side));
  for (std::size_t bd = 0; bd < g; ++bd) {
    for (std::size_t bh = 0; bh < g; ++bh) {
      for (std::size_t bw = 0; bw < g; ++bw) {
        const std::size_t p = (bd * g + bh) * g + bw;
        std::size_t k = 0;
        for (std::size_t d = 0; d < patch; ++d) {
          for (std::size_t h = 0; h < patch; ++h) {
            for (std::size_t w = 0; w < patch; ++w) {
              v.at(bd * patch + d, bh * patch + h, bw * patch + w) = seq.tokens[p * pv + k++];
            }
          }
        }
      }
    }
  }
  return v;
}

PatchMask mask_patches(std::size_t n_patches, double mask_ratio, std::uint64_t seed) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw ValidationError("mask_ratio must lie in [0, 1)");
  }
  const auto n_masked = static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(n_patches)));
  Rng rng(seed);
  std::vector<std::size_t> order = rng.permutation(n_patches);
  PatchMask m;
  m.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_masked));
  m.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(n_masked), order.end());
  std::sort(m.masked.begin(), m.masked.end());
  std::sort(m.visible.begin(), m.visible.end());
  return m;
}

}  // namespace attmix
