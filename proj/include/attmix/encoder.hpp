#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attmix/autodiff.hpp"
#include "attmix/layers.hpp"
#include "attmix/volume.hpp"
#include "json.hpp"

namespace attmix {

struct EncoderConfig {
  std::size_t side = 16;
  std::size_t patch = 4;
  std::size_t d_enc = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  double mask_ratio = 0.75;
  std::size_t d_f = 64;

  std::size_t grid() const { return side / patch; }
  std::size_t n_patches() const { return grid() * grid() * grid(); }
  std::size_t patch_voxels() const { return patch * patch * patch; }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Non-overlapping patch tokens [n_patches x patch^3]. Patches are ordered
// lexicographically by (d, h, w) block index; voxels inside a patch are
// row-major (d, h, w).
struct PatchSequence {
  std::size_t side = 0;
  std::size_t patch = 0;
  Tensor<float> tokens;
};

PatchSequence patchify(const Volume& v, std::size_t patch);
Volume unpatchify(const PatchSequence& seq);

struct PatchMask {
  std::vector<std::size_t> visible;  // ascending
  std::vector<std::size_t> masked;   // ascending
};

// Uniformly random subset of exactly round(ratio * n) masked patches.
PatchMask mask_patches(std::size_t n_patches, double mask_ratio, std::uint64_t seed);

// Pre-norm transformer block: x + MHA(LN(x)); x + MLP(LN(x)).
template <typename T>
struct EncoderBlock {
  LayerNormParams<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Linear<T> fc1, fc2;

  EncoderBlock() = default;
  EncoderBlock(const EncoderConfig& c, Rng& rng)
      : ln1(c.d_enc),
        ln2(c.d_enc),
        attn(c.d_enc, c.heads, rng),
        fc1(c.d_enc, c.d_enc * c.mlp_ratio, true, rng),
        fc2(c.d_enc * c.mlp_ratio, c.d_enc, true, rng) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x, std::size_t batch) {
    Var<T> h = ln1(tape, x);
    x = add(x, multi_head_attention(tape, h, h, batch, attn));
    Var<T> m = fc2(tape, gelu(fc1(tape, ln2(tape, x))));
    return add(x, m);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// ViT over 3D patch tokens with a linear masked-reconstruction decoder and
// the flatten + projection to a single d_f-wide token.
template <typename T>
class ViTEncoder {
 public:
  ViTEncoder() = default;
  ViTEncoder(const EncoderConfig& c, Rng& rng) : cfg_(c) {
    c.validate();
    patch_embed_ = Linear<T>(c.patch_voxels(), c.d_enc, true, rng);
    pos_ = Tensor<T>({c.n_patches(), c.d_enc});
    for (std::size_t i = 0; i < pos_.size(); ++i) pos_[i] = static_cast<T>(rng.uniform(-0.02, 0.02));
    pos_.set_requires_grad(true);
    for (std::size_t b = 0; b < c.depth; ++b) blocks_.emplace_back(c, rng);
    mask_token_ = Tensor<T>({1, c.d_enc});
    for (std::size_t i = 0; i < mask_token_.size(); ++i) {
      mask_token_[i] = static_cast<T>(rng.uniform(-0.02, 0.02));
    }
    mask_token_.set_requires_grad(true);
    decoder_ = Linear<T>(c.d_enc, c.patch_voxels(), true, rng);
    projection_ = fan_in_uniform<T>({c.d_f, c.n_patches() * c.d_enc}, c.n_patches() * c.d_enc, rng);
  }

  const EncoderConfig& config() const { return cfg_; }

  // tokens [batch*n_patches x patch^3] -> patch embedding plus positions.
  Var<T> embed(Tape<T>& tape, Var<T> tokens) {
    if (tokens.cols() != cfg_.patch_voxels()) {
      throw DimensionError("encoder: token length " + std::to_string(tokens.cols()) +
                           " does not match patch embedding input " +
                           std::to_string(cfg_.patch_voxels()));
    }
    return add_tiled(patch_embed_(tape, tokens), tape.parameter(pos_));
  }

  Var<T> run_blocks(Tape<T>& tape, Var<T> x, std::size_t batch) {
    for (EncoderBlock<T>& blk : blocks_) x = blk(tape, x, batch);
    return x;
  }

  // [batch*n_patches x patch^3] -> [batch*n_patches x d_enc]
  Var<T> encode(Tape<T>& tape, Var<T> tokens, std::size_t batch) {
    if (tokens.rows() != batch * cfg_.n_patches()) {
      throw DimensionError("encoder: expected " + std::to_string(batch * cfg_.n_patches()) +
                           " token rows, got " + std::to_string(tokens.rows()));
    }
    return run_blocks(tape, embed(tape, tokens), batch);
  }

  // Flatten each sample token-major then channel, project to [batch x d_f].
  Var<T> project(Tape<T>& tape, Var<T> encoded, std::size_t batch) {
    const std::size_t width = cfg_.n_patches() * cfg_.d_enc;
    if (encoded.value().size() != batch * width) {
      throw DimensionError("projection: encoded tokens " + shape_str(encoded.shape()) +
                           " do not match W_HCT input width " + std::to_string(width));
    }
    return linear(reshape(encoded, {batch, width}), tape.parameter(projection_));
  }

  // Masked-reconstruction loss for one sequence [n_patches x patch^3]:
  // linear decoder on the encoded sequence, MSE over masked patches.
  Var<T> reconstruction_loss(Tape<T>& tape, const Tensor<T>& tokens, const PatchMask& mask) {
    const std::size_t n = cfg_.n_patches();
    if (tokens.rows() != n || tokens.cols() != cfg_.patch_voxels()) {
      throw DimensionError("reconstruction: token tensor " + shape_str(tokens.shape()) +
                           " does not match the encoder grid");
    }
    if (mask.visible.empty()) throw ValidationError("mask leaves no visible patches");
    if (mask.masked.empty()) throw ValidationError("mask hides no patches; nothing to reconstruct");
    Var<T> target = tape.constant(tokens);
    // Masked rows enter the blocks as mask token + position.
    Var<T> emb = embed(tape, target);
    Var<T> fillers = add_tiled(repeat_rows(tape.parameter(mask_token_), n), tape.parameter(pos_));
    Var<T> mixed = scatter_rows(fillers, gather_rows(emb, mask.visible), mask.visible);
    Var<T> decoded = decoder_(tape, run_blocks(tape, mixed, 1));
    return mse_loss(gather_rows(decoded, mask.masked), gather_rows(target, mask.masked));
  }

  // Parameters of the transformer itself (everything except the projection).
  void collect_encoder(std::vector<NamedParam<T>>& out) {
    patch_embed_.collect("encoder.patch_embed", out);
    out.push_back({"encoder.pos", &pos_});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      blocks_[b].collect("encoder.blocks." + std::to_string(b), out);
    }
    out.push_back({"encoder.mask_token", &mask_token_});
    decoder_.collect("encoder.decoder", out);
  }

  void collect_projection(std::vector<NamedParam<T>>& out) {
    out.push_back({"hct_proj.weight", &projection_});
  }

  Tensor<T>& projection() { return projection_; }
  Tensor<T>& positions() { return pos_; }
  Linear<T>& decoder() { return decoder_; }
  Linear<T>& patch_embedding() { return patch_embed_; }
  std::vector<EncoderBlock<T>>& blocks() { return blocks_; }

 private:
  EncoderConfig cfg_;
  Linear<T> patch_embed_;
  Tensor<T> pos_;
  std::vector<EncoderBlock<T>> blocks_;
  Tensor<T> mask_token_;
  Linear<T> decoder_;
  Tensor<T> projection_;
};

}  // namespace attmix
