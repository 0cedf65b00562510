#pragma once

#include <cstddef>
#include <cstdint>

#include "json.hpp"

namespace damo {

/// Ratio of learnable visual to audio query tokens in every fuseformer layer.
inline constexpr std::size_t kQueryRatio = 3;
/// Consecutive frames fused by one group of the temporal convolution.
inline constexpr std::size_t kFramesPerGroup = 3;

/// Sampling geometry and encoder widths of the full-size system. Kept as a
/// reference point; desk-scale runs use ToyConfig.
struct FullScaleConfig {
  std::size_t n_frames = 24;
  std::size_t n_audio = 8;
  double segment_seconds = 30.0;
  std::size_t audio_rate_hz = 16000;
  std::size_t frame_size = 336;
  // Encoder widths are not given numerically; these are the usual
  // ViT-L/14 and Whisper-small hidden sizes.
  std::size_t visual_dim = 1024;
  std::size_t audio_dim = 768;
  std::size_t visual_queries = 192;
  std::size_t audio_queries = 64;
  std::size_t fusion_queries = 128;
  std::size_t query_dim = 768;
  std::size_t lora_rank = 32;
  double lora_alpha = 64.0;
  double learning_rate = 1e-4;
  double weight_decay = 0.02;

  std::size_t conv_groups() const { return n_frames / kFramesPerGroup; }
  std::size_t audio_samples_per_segment() const {
    return static_cast<std::size_t>(segment_seconds) * audio_rate_hz;
  }
};

/// Model and data geometry of the desk-scale system.
struct ToyConfig {
  std::size_t n_frames = 6;        // N
  std::size_t n_audio = 2;         // M
  std::size_t visual_tokens = 17;  // L_v, cls at index 0
  std::size_t audio_tokens = 10;   // L_a
  std::size_t visual_dim = 32;     // D_v
  std::size_t audio_dim = 24;      // D_a
  std::size_t pooled_tokens = 4;   // L'
  std::size_t model_dim = 48;      // d
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t visual_queries = 12;
  std::size_t audio_queries = 4;
  std::size_t fusion_queries = 8;
  std::size_t vocab = 64;
  std::size_t time_bins = 20;
  std::size_t ffn_mult = 2;
  std::size_t temporal_max = 16;
  std::size_t projector_queries = 16;  // K_p
  std::size_t projector_blocks = 1;
  std::size_t llm_dim = 48;
  std::size_t llm_blocks = 2;
  std::size_t llm_heads = 4;
  std::size_t llm_max_positions = 64;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  std::size_t embed_dim = 32;  // d_e of the alignment space
  double temperature = 0.07;

  /// Throws ContractViolation when the geometry is inconsistent.
  void validate() const;

  std::size_t conv_groups() const { return n_frames / kFramesPerGroup; }
};

/// Fuseformer geometry at full size (192/64/128 queries of width 768).
ToyConfig full_scale_fuseformer_config();

void to_json(nlohmann::json& j, const ToyConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ToyConfig& c);

}  // namespace damo
