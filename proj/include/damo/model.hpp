#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "damo/config.hpp"
#include "damo/fuseformer.hpp"
#include "damo/grounding.hpp"
#include "damo/llm_bridge.hpp"
#include "damo/objectives.hpp"
#include "damo/parameter.hpp"
#include "damo/spatial.hpp"
#include "damo/temporal.hpp"

namespace damo {

namespace groups {
inline const std::string kPathways = "pathways";
inline const std::string kFuseformer = "fuseformer";
inline const std::string kAlignment = "alignment";
inline const std::string kProjector = "projector";
inline const std::string kLora = "lora";
inline const std::string kLlm = "llm";
}  // namespace groups

/// Intermediate tensors of one encode pass.
struct EncodeTrace {
  Var visual_reduced;  // [N×L'×D_v]
  Var audio_reduced;   // [M×L'×D_a]
  Var visual_tokens;   // [(N/3)·L'×d]
  Var audio_tokens;    // [M·L'×d]
  FuseformerTrace fuseformer;
};

/// Predicted answer in bin space and seconds.
struct SegmentPrediction {
  std::vector<int> tokens;  // [SEG, start bin token, end bin token]
  Segment segment;
};

/// The whole trainable system: pathways, fuseformer, stage-1 heads,
/// projector and the frozen toy decoder with its adapters.
class DamoModel {
 public:
  DamoModel(const ToyConfig& cfg, std::uint64_t seed);
  DamoModel(const DamoModel&) = delete;
  DamoModel& operator=(const DamoModel&) = delete;

  const ToyConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  /// visual [N×L_v×D_v], audio [M×L_a×D_a] → FUSION state [Q_f×d].
  Var encode(Graph& g, const Tensor& visual, const Tensor& audio, EncodeTrace* trace = nullptr) const;
  /// FUSION state → soft prompts [K_p×d_llm].
  Var soft_prompts(Graph& g, Var fusion) const;
  /// Decoder logits for `tokens` conditioned on the FUSION state.
  Var text_logits(Graph& g, Var fusion, const std::vector<int>& tokens, bool use_lora) const;

  /// Greedy answer: SEG is forced, then the most likely start bin and end
  /// bin are taken in turn, each restricted to bin tokens.
  SegmentPrediction predict_segment(const Tensor& visual, const Tensor& audio, double duration,
                                    const std::vector<int>& prompt, bool use_lora) const;

  const SpatialPathway& visual_spatial() const { return visual_spatial_; }
  const SpatialPathway& audio_spatial() const { return audio_spatial_; }
  const GroupedTemporalConv& temporal_conv() const { return temporal_conv_; }
  const TemporalEmbedding& visual_time() const { return visual_time_; }
  const TemporalEmbedding& audio_time() const { return audio_time_; }
  const Fuseformer& fuseformer() const { return fuseformer_; }
  const AlignmentHeads& heads() const { return heads_; }
  const QFormerProjector& projector() const { return projector_; }
  const ToyDecoder& decoder() const { return decoder_; }

 private:
  ToyConfig cfg_;
  std::uint64_t seed_;
  ParameterStore store_;
  SpatialPathway visual_spatial_;
  SpatialPathway audio_spatial_;
  GroupedTemporalConv temporal_conv_;
  Linear visual_proj_;
  Linear audio_proj_;
  TemporalEmbedding visual_time_;
  TemporalEmbedding audio_time_;
  Fuseformer fuseformer_;
  AlignmentHeads heads_;
  QFormerProjector projector_;
  ToyDecoder decoder_;
};

}  // namespace damo
