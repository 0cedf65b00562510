#include "damo/config.hpp"

#include <set>
#include <string>

#include "damo/tensor.hpp"

namespace damo {

#define DAMO_TOY_FIELDS(X)                                                                                       \
  X(n_frames) X(n_audio) X(visual_tokens) X(audio_tokens) X(visual_dim) X(audio_dim) X(pooled_tokens) X(model_dim) \
  X(heads) X(layers) X(visual_queries) X(audio_queries) X(fusion_queries) X(vocab) X(time_bins) X(ffn_mult)        \
  X(temporal_max) X(projector_queries) X(projector_blocks) X(llm_dim) X(llm_blocks) X(llm_heads)                 \
  X(llm_max_positions) X(lora_rank) X(lora_alpha) X(embed_dim) X(temperature)

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation("invalid model config: " + what);
}

}  // namespace

void ToyConfig::validate() const {
  require(n_frames >= kFramesPerGroup && n_frames % kFramesPerGroup == 0, "n_frames must be a positive multiple of 3");
  require(n_audio >= 1, "n_audio must be at least 1");
  require(visual_tokens >= 2, "visual_tokens must include the cls token and at least one patch");
  require(audio_tokens >= 1, "audio_tokens must be at least 1");
  require(pooled_tokens >= 1 && pooled_tokens <= visual_tokens - 1 && pooled_tokens <= audio_tokens,
          "pooled_tokens must not exceed either modality's local token count");
  require(audio_queries >= 1 && visual_queries == kQueryRatio * audio_queries,
          "visual_queries must equal 3 x audio_queries");
  require(fusion_queries >= 1, "fusion_queries must be at least 1");
  require(heads >= 1 && model_dim % heads == 0, "model_dim must be divisible by heads");
  require(llm_heads >= 1 && llm_dim % llm_heads == 0, "llm_dim must be divisible by llm_heads");
  require(layers >= 1, "layers must be at least 1");
  require(temporal_max >= std::max(conv_groups(), n_audio), "temporal_max shorter than the temporal axis");
  require(model_dim >= 2 && llm_dim >= 2 && embed_dim >= 2, "feature widths must be at least 2");
  require(time_bins >= 2, "time_bins must be at least 2");
  require(temperature > 0.0, "temperature must be positive");
  require(ffn_mult >= 1, "ffn_mult must be at least 1");
  require(projector_queries >= 1, "projector_queries must be at least 1");
}

ToyConfig full_scale_fuseformer_config() {
  const FullScaleConfig p;
  ToyConfig c;
  c.n_frames = p.n_frames;
  c.n_audio = p.n_audio;
  c.visual_dim = p.visual_dim;
  c.audio_dim = p.audio_dim;
  c.visual_queries = p.visual_queries;
  c.audio_queries = p.audio_queries;
  c.fusion_queries = p.fusion_queries;
  c.model_dim = p.query_dim;
  c.heads = 12;
  c.layers = 1;
  c.ffn_mult = 1;
  c.temporal_max = 32;
  return c;
}

void to_json(nlohmann::json& j, const ToyConfig& c) {
  j = nlohmann::json::object();
#define DAMO_TO_JSON(f) j[#f] = c.f;
  DAMO_TOY_FIELDS(DAMO_TO_JSON)
#undef DAMO_TO_JSON
}

void from_json(const nlohmann::json& j, ToyConfig& c) {
  if (!j.is_object()) throw ContractViolation("model config must be a JSON object");
  static const std::set<std::string> known = {
#define DAMO_NAME(f) #f,
      DAMO_TOY_FIELDS(DAMO_NAME)
#undef DAMO_NAME
  };
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ContractViolation("unknown model config key '" + key + "'");
#define DAMO_FROM_JSON(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
  DAMO_TOY_FIELDS(DAMO_FROM_JSON)
#undef DAMO_FROM_JSON
}

}  // namespace damo
