#include "damo/model.hpp"

#include <limits>

#include "damo/rng.hpp"
#include "damo/synthetic.hpp"

namespace damo {

namespace {
// Each submodule draws from its own stream so adding one does not shift the
// initial values of the others.
Rng stream(std::uint64_t seed, std::uint64_t id) { return Rng(mix_seed(seed, id)); }
}  // namespace

DamoModel::DamoModel(const ToyConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const std::size_t d = cfg_.model_dim;
  {
    Rng r = stream(seed, 1);
    visual_spatial_ = SpatialPathway::create(store_, "pathways.visual.spatial", groups::kPathways, Modality::kVisual,
                                             cfg_.visual_dim, cfg_.ffn_mult * cfg_.visual_dim, cfg_.pooled_tokens, r);
    audio_spatial_ = SpatialPathway::create(store_, "pathways.audio.spatial", groups::kPathways, Modality::kAudio,
                                            cfg_.audio_dim, cfg_.ffn_mult * cfg_.audio_dim, cfg_.pooled_tokens, r);
    temporal_conv_ = GroupedTemporalConv::create(store_, "pathways.visual.temporal_conv", groups::kPathways,
                                                 cfg_.n_frames, r);
    visual_proj_ = Linear::create(store_, "pathways.visual.proj", groups::kPathways, cfg_.visual_dim, d, r);
    audio_proj_ = Linear::create(store_, "pathways.audio.proj", groups::kPathways, cfg_.audio_dim, d, r);
    visual_time_ = TemporalEmbedding::create(store_, "pathways.visual.time", groups::kPathways, cfg_.temporal_max, d, r);
    audio_time_ = TemporalEmbedding::create(store_, "pathways.audio.time", groups::kPathways, cfg_.temporal_max, d, r);
  }
  {
    Rng r = stream(seed, 2);
    fuseformer_ = Fuseformer::create(store_, "fuseformer", groups::kFuseformer, cfg_, r);
  }
  {
    Rng r = stream(seed, 3);
    heads_ = AlignmentHeads::create(store_, "alignment", groups::kAlignment, cfg_, r);
  }
  {
    Rng r = stream(seed, 4);
    projector_ = QFormerProjector::create(store_, "projector", groups::kProjector, cfg_, r);
  }
  {
    Rng r = stream(seed, 5);
    decoder_ = ToyDecoder::create(store_, "llm", groups::kLlm, groups::kLora, cfg_, r);
  }
  store_.freeze_all();
}

Var DamoModel::encode(Graph& g, const Tensor& visual, const Tensor& audio, EncodeTrace* trace) const {
  const Shape vs{cfg_.n_frames, cfg_.visual_tokens, cfg_.visual_dim};
  const Shape as{cfg_.n_audio, cfg_.audio_tokens, cfg_.audio_dim};
  if (visual.shape() != vs) throw DimensionError("visual features " + shape_str(visual.shape()) + ", expected " + shape_str(vs));
  if (audio.shape() != as) throw DimensionError("audio features " + shape_str(audio.shape()) + ", expected " + shape_str(as));

  Var v = visual_spatial_(g, g.constant(visual));
  Var a = audio_spatial_(g, g.constant(audio));
  if (trace) {
    trace->visual_reduced = v;
    trace->audio_reduced = a;
  }
  v = visual_time_(g, project_to_model_dim(g, temporal_conv_(g, v), visual_proj_));
  a = audio_time_(g, project_to_model_dim(g, a, audio_proj_));
  v = reshape(v, {v.dim(0) * v.dim(1), v.dim(2)});
  a = reshape(a, {a.dim(0) * a.dim(1), a.dim(2)});
  if (trace) {
    trace->visual_tokens = v;
    trace->audio_tokens = a;
  }
  return fuseformer_(g, v, a, trace ? &trace->fuseformer : nullptr);
}

Var DamoModel::soft_prompts(Graph& g, Var fusion) const { return projector_(g, fusion); }

Var DamoModel::text_logits(Graph& g, Var fusion, const std::vector<int>& tokens, bool use_lora) const {
  return decoder_(g, soft_prompts(g, fusion), tokens, use_lora);
}

SegmentPrediction DamoModel::predict_segment(const Tensor& visual, const Tensor& audio, double duration,
                                             const std::vector<int>& prompt, bool use_lora) const {
  Graph g;
  Var prompts = soft_prompts(g, encode(g, visual, audio));
  std::vector<int> seq = prompt;
  seq.push_back(vocab::kSeg);
  SegmentPrediction out;
  out.tokens.push_back(vocab::kSeg);
  std::size_t bins[2] = {0, 0};
  for (std::size_t& bin : bins) {
    Var logits = decoder_(g, prompts, seq, use_lora);
    const std::size_t last = seq.size() - 1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < cfg_.time_bins; ++b) {
      const double z = logits.value().at(last, static_cast<std::size_t>(vocab::bin_token(b)));
      if (z > best) {
        best = z;
        bin = b;
      }
    }
    seq.push_back(vocab::bin_token(bin));
    out.tokens.push_back(vocab::bin_token(bin));
  }
  out.segment = decode_bins(bins[0], bins[1], duration, cfg_.time_bins);
  return out;
}

}  // namespace damo
