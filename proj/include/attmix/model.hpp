#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attmix/autodiff.hpp"
#include "attmix/encoder.hpp"
#include "attmix/layers.hpp"
#include "attmix/metadata.hpp"
#include "json.hpp"

namespace attmix {

enum class Variant { kFull, kNoCa, kNoMixer, kEarlyFusion, kMetaOnly, kHctOnly };

inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::kFull,        Variant::kNoCa,     Variant::kNoMixer,
    Variant::kEarlyFusion, Variant::kMetaOnly, Variant::kHctOnly};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // ConfigError on unknown names

inline bool uses_hct(Variant v) { return v != Variant::kMetaOnly; }
inline bool uses_metadata(Variant v) { return v != Variant::kHctOnly; }

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t d_m = 0;            // metadata width after one-hot expansion
  std::size_t fusion_heads = 4;
  std::size_t mixer_blocks = 2;
  std::size_t mixer_hidden = 0;   // 0 means 2 * d_f
  // Adds the query token back onto the cross-attention output. With a single
  // metadata token the attention weights are constant, so without this the
  // fused token does not depend on the HCT branch at all.
  bool fusion_residual = true;
  Variant variant = Variant::kFull;

  std::size_t d_f() const { return encoder.d_f; }
  std::size_t hidden() const { return mixer_hidden ? mixer_hidden : 2 * encoder.d_f; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// f_meta(M) = W_meta M + b_meta, with the learnable e_m substituted for
// records that are missing entirely.
template <typename T>
struct MetadataEncoder {
  Linear<T> embed;       // weight [d_f x d_m]
  Tensor<T> missing;     // e_m, [1 x d_m]

  MetadataEncoder() = default;
  MetadataEncoder(std::size_t d_m, std::size_t d_f, Rng& rng)
      : embed(d_m, d_f, true, rng), missing(filled<T>({1, d_m}, T(0))) {}

  // values [batch x d_m]; rows listed in `missing_rows` are replaced by e_m.
  Var<T> operator()(Tape<T>& tape, const Tensor<T>& values,
                    const std::vector<std::size_t>& missing_rows) {
    if (values.cols() != embed.in_features()) {
      throw DimensionError("metadata width " + std::to_string(values.cols()) +
                           " does not match W_meta input " + std::to_string(embed.in_features()));
    }
    Var<T> e_m = tape.parameter(missing);
    Var<T> x = tape.constant(values);
    if (!missing_rows.empty()) x = scatter_rows(x, repeat_rows(e_m, missing_rows.size()), missing_rows);
    return embed(tape, x);
  }

  void collect(std::vector<NamedParam<T>>& out) {
    embed.collect("meta.embed", out);
    out.push_back({"meta.e_m", &missing});
  }
};

// Single-record embedding; partially missing records must be imputed first.
template <typename T>
Var<T> embed_metadata(Tape<T>& tape, const MetadataRecord& rec, MetadataEncoder<T>& enc) {
  if (!rec.fully_missing && !rec.complete()) {
    throw ContractError("metadata record of '" + rec.patient_id +
                        "' is partially missing; run imputation before embedding");
  }
  Tensor<T> values({1, rec.values.size()});
  if (!rec.fully_missing) {
    for (std::size_t j = 0; j < rec.values.size(); ++j) values[j] = static_cast<T>(rec.values[j]);
  }
  std::vector<std::size_t> missing;
  if (rec.fully_missing) missing.push_back(0);
  return enc(tape, values, missing);
}

// HCT tokens query the metadata tokens: [batch x d_f] against [batch*L x d_f].
template <typename T>
Var<T> cross_attention_fuse(Tape<T>& tape, Var<T> hct, Var<T> meta, std::size_t batch,
                            MultiHeadAttention<T>& ca, bool residual,
                            AttentionWeights<T>* weights = nullptr) {
  if (meta.rows() == 0 || meta.rows() < batch) {
    throw ContractError("cross-attention needs at least one metadata token per sample");
  }
  if (hct.cols() != meta.cols()) {
    throw DimensionError("cross-attention widths differ: " + shape_str(hct.shape()) + " vs " +
                         shape_str(meta.shape()));
  }
  Var<T> fused = multi_head_attention(tape, hct, meta, batch, ca, weights);
  return residual ? add(hct, fused) : fused;
}

// Channel-mixing block: U + MLP(LayerNorm(U)).
template <typename T>
struct MixerBlock {
  LayerNormParams<T> norm;
  Linear<T> fc1, fc2;

  MixerBlock() = default;
  MixerBlock(std::size_t d_f, std::size_t hidden, Rng& rng)
      : norm(d_f), fc1(d_f, hidden, true, rng), fc2(hidden, d_f, true, rng) {
    // Zero output layer: the block starts as an exact identity.
    std::fill(fc2.weight.values().begin(), fc2.weight.values().end(), T(0));
  }

  Var<T> operator()(Tape<T>& tape, Var<T> u) {
    return add(u, fc2(tape, gelu(fc1(tape, norm(tape, u)))));
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    norm.collect(prefix + ".norm", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// Mean over the token axis: [batch*tokens x d] -> [batch x d].
template <typename T>
Var<T> gap_pool(Var<T> tokens, std::size_t tokens_per_sample) {
  return mean_groups(tokens, tokens_per_sample);
}

template <typename T>
struct ClassifierHead {
  Linear<T> fc;  // W_cls [1 x d_f], b_cls

  ClassifierHead() = default;
  ClassifierHead(std::size_t d_f, Rng& rng) : fc(d_f, 1, true, rng) {}

  Var<T> operator()(Tape<T>& tape, Var<T> pooled) { return sigmoid(fc(tape, pooled)); }

  void collect(std::vector<NamedParam<T>>& out) { fc.collect("head", out); }
};

// Inputs for one forward pass over `size` samples.
template <typename T>
struct Batch {
  std::size_t size = 0;
  Tensor<T> tokens;                   // [size*n_patches x patch^3]
  std::optional<Tensor<T>> encoded;   // cached encoder output [size*n_patches x d_enc]
  Tensor<T> metadata;                 // [size x d_m]
  std::vector<std::size_t> missing_rows;
  std::vector<T> labels;
};

// Intermediate values of the last forward pass.
template <typename T>
struct ForwardTrace {
  std::optional<Var<T>> hct;      // F'_HCT [batch x d_f]
  std::optional<Var<T>> meta;     // F'_meta [batch x d_f]
  std::optional<Var<T>> fused;    // after fusion, before the mixer
  std::optional<Var<T>> pooled;   // F_GAP
  AttentionWeights<T> attention;  // cross-attention weights (full / no_mixer)
};

template <typename T>
class AttentionMixer {
 public:
  AttentionMixer() = default;
  AttentionMixer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t d_f = cfg.d_f();
    encoder_ = ViTEncoder<T>(cfg.encoder, rng);
    meta_ = MetadataEncoder<T>(cfg.d_m, d_f, rng);
    fusion_ = MultiHeadAttention<T>(d_f, cfg.fusion_heads, rng);
    for (std::size_t b = 0; b < cfg.mixer_blocks; ++b) mixer_.emplace_back(d_f, cfg.hidden(), rng);
    early_ = Linear<T>(2 * d_f, d_f, true, rng);
    head_ = ClassifierHead<T>(d_f, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return cfg_.variant; }
  void set_variant(Variant v) { cfg_.variant = v; }

  ViTEncoder<T>& encoder() { return encoder_; }
  MetadataEncoder<T>& metadata_encoder() { return meta_; }
  MultiHeadAttention<T>& fusion() { return fusion_; }
  std::vector<MixerBlock<T>>& mixer() { return mixer_; }
  Linear<T>& early_fusion() { return early_; }
  ClassifierHead<T>& head() { return head_; }

  // F'_HCT for the batch, from cached encoder output when present.
  Var<T> hct_token(Tape<T>& tape, const Batch<T>& batch) {
    Var<T> encoded = batch.encoded ? tape.constant(*batch.encoded)
                                   : encoder_.encode(tape, tape.constant(batch.tokens), batch.size);
    return encoder_.project(tape, encoded, batch.size);
  }

  // Predicted probabilities [batch x 1].
  Var<T> forward(Tape<T>& tape, const Batch<T>& batch, ForwardTrace<T>* trace = nullptr) {
    const Variant v = cfg_.variant;
    std::optional<Var<T>> hct, meta;
    if (uses_hct(v)) hct = hct_token(tape, batch);
    if (uses_metadata(v)) meta = meta_(tape, batch.metadata, batch.missing_rows);

    AttentionWeights<T> weights;
    Var<T> fused;
    bool mix = false;
    switch (v) {
      case Variant::kFull:
        fused = cross_attention_fuse(tape, *hct, *meta, batch.size, fusion_, cfg_.fusion_residual,
                                     &weights);
        mix = true;
        break;
      case Variant::kNoCa:
        fused = add(*hct, *meta);
        mix = true;
        break;
      case Variant::kNoMixer:
        fused = cross_attention_fuse(tape, *hct, *meta, batch.size, fusion_, cfg_.fusion_residual,
                                     &weights);
        break;
      case Variant::kEarlyFusion:
        fused = early_(tape, concat_cols(*hct, *meta));
        break;
      case Variant::kMetaOnly:
        fused = *meta;
        break;
      case Variant::kHctOnly:
        fused = *hct;
        break;
    }
    Var<T> refined = fused;
    if (mix) {
      for (MixerBlock<T>& blk : mixer_) refined = blk(tape, refined);
    }
    Var<T> pooled = gap_pool(refined, 1);
    Var<T> prob = head_(tape, pooled);
    if (trace) {
      trace->hct = hct;
      trace->meta = meta;
      trace->fused = fused;
      trace->pooled = pooled;
      trace->attention = std::move(weights);
    }
    return prob;
  }

  // Every parameter, in a fixed order (checkpoint registry order).
  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    encoder_.collect_encoder(out);
    encoder_.collect_projection(out);
    meta_.collect(out);
    fusion_.collect("fusion", out);
    for (std::size_t b = 0; b < mixer_.size(); ++b) mixer_[b].collect("mixer." + std::to_string(b), out);
    early_.collect("early", out);
    head_.collect(out);
    return out;
  }

  // Parameters the active variant reads.
  std::vector<NamedParam<T>> variant_parameters() {
    const Variant v = cfg_.variant;
    std::vector<NamedParam<T>> out;
    if (uses_hct(v)) {
      encoder_.collect_encoder(out);
      // The decoder only serves pretraining.
      std::erase_if(out, [](const NamedParam<T>& p) {
        return p.name.rfind("encoder.decoder", 0) == 0 || p.name == "encoder.mask_token";
      });
      encoder_.collect_projection(out);
    }
    if (uses_metadata(v)) meta_.collect(out);
    if (v == Variant::kFull || v == Variant::kNoMixer) fusion_.collect("fusion", out);
    if (v == Variant::kFull || v == Variant::kNoCa) {
      for (std::size_t b = 0; b < mixer_.size(); ++b) mixer_[b].collect("mixer." + std::to_string(b), out);
    }
    if (v == Variant::kEarlyFusion) early_.collect("early", out);
    head_.collect(out);
    return out;
  }

  void set_encoder_frozen(bool frozen) {
    std::vector<NamedParam<T>> enc;
    encoder_.collect_encoder(enc);
    for (NamedParam<T>& p : enc) p.tensor->set_requires_grad(!frozen);
  }

  bool encoder_frozen() {
    std::vector<NamedParam<T>> enc;
    encoder_.collect_encoder(enc);
    return !enc.front().tensor->requires_grad();
  }

 private:
  ModelConfig cfg_;
  ViTEncoder<T> encoder_;
  MetadataEncoder<T> meta_;
  MultiHeadAttention<T> fusion_;
  std::vector<MixerBlock<T>> mixer_;
  Linear<T> early_;
  ClassifierHead<T> head_;
};

}  // namespace attmix
