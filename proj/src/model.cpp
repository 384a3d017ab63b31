#include "attmix/model.hpp"

#include "attmix/error.hpp"

namespace attmix {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCa: return "no_ca";
    case Variant::kNoMixer: return "no_mixer";
    case Variant::kEarlyFusion: return "early_fusion";
    case Variant::kMetaOnly: return "meta_only";
    case Variant::kHctOnly: return "hct_only";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected full, no_ca, no_mixer, early_fusion, meta_only or hct_only)");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (d_m == 0) throw ConfigError("metadata width d_m must be positive");
  if (fusion_heads == 0 || encoder.d_f % fusion_heads != 0) {
    throw ConfigError("d_f " + std::to_string(encoder.d_f) + " must be divisible by fusion heads " +
                      std::to_string(fusion_heads));
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder},
       {"d_m", c.d_m},
       {"fusion_heads", c.fusion_heads},
       {"mixer_blocks", c.mixer_blocks},
       {"mixer_hidden", c.hidden()},
       {"fusion_residual", c.fusion_residual},
       {"variant", std::string(variant_name(c.variant))}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  c.d_m = j.value("d_m", c.d_m);
  c.fusion_heads = j.value("fusion_heads", c.fusion_heads);
  c.mixer_blocks = j.value("mixer_blocks", c.mixer_blocks);
  c.mixer_hidden = j.value("mixer_hidden", c.mixer_hidden);
  c.fusion_residual = j.value("fusion_residual", c.fusion_residual);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
}

}  // namespace attmix
