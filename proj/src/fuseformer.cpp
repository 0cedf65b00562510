#include "damo/fuseformer.hpp"

namespace damo {

UnimodalStage UnimodalStage::create(ParameterStore& store, const std::string& name, const std::string& group,
                                    std::size_t dim, std::size_t heads, std::size_t ffn_hidden, std::size_t n_queries,
                                    Rng& rng) {
  UnimodalStage s;
  s.refine = SelfAttentionBlock::create(store, name + ".refine", group, dim, heads, ffn_hidden, rng);
  s.queries = &store.add(name + ".queries", group, rng.normal_tensor({n_queries, dim}, 0.02));
  s.compress = CrossAttentionBlock::create(store, name + ".compress", group, dim, heads, ffn_hidden, rng);
  return s;
}

Var UnimodalStage::refined(Graph& g, Var features) const { return refine(g, features); }

Var UnimodalStage::operator()(Graph& g, Var features) const {
  return compress(g, g.param(*queries), refined(g, features));
}

MultimodalStage MultimodalStage::create(ParameterStore& store, const std::string& name, const std::string& group,
                                        std::size_t dim, std::size_t heads, std::size_t ffn_hidden, Rng& rng) {
  return MultimodalStage{SelfAttentionBlock::create(store, name + ".fuse", group, dim, heads, ffn_hidden, rng)};
}

Var MultimodalStage::operator()(Graph& g, Var fusion, Var visual_compressed, Var audio_compressed) const {
  const std::size_t qf = fusion.dim(0);
  Var seq = concat_rows({fusion, visual_compressed, audio_compressed});
  return slice_rows(fuse(g, seq), 0, qf);
}

Fuseformer Fuseformer::create(ParameterStore& store, const std::string& name, const std::string& group,
                              const ToyConfig& cfg, Rng& rng) {
  if (cfg.audio_queries == 0 || cfg.visual_queries != kQueryRatio * cfg.audio_queries)
    throw ContractViolation("fuseformer: visual queries (" + std::to_string(cfg.visual_queries) +
                            ") must be 3x audio queries (" + std::to_string(cfg.audio_queries) + ")");
  if (cfg.layers == 0) throw ContractViolation("fuseformer: depth must be at least 1");
  Fuseformer f;
  const std::size_t d = cfg.model_dim, hidden = cfg.ffn_mult * cfg.model_dim;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    f.layers_.push_back(FuseformerLayer{
        UnimodalStage::create(store, p + ".visual", group, d, cfg.heads, hidden, cfg.visual_queries, rng),
        UnimodalStage::create(store, p + ".audio", group, d, cfg.heads, hidden, cfg.audio_queries, rng),
        MultimodalStage::create(store, p + ".multimodal", group, d, cfg.heads, hidden, rng)});
  }
  f.fusion_queries_ = &store.add(name + ".fusion_queries", group, rng.normal_tensor({cfg.fusion_queries, d}, 0.02));
  return f;
}

Var Fuseformer::operator()(Graph& g, Var visual, Var audio, FuseformerTrace* trace) const {
  Var fusion = g.param(*fusion_queries_);
  for (const auto& layer : layers_) {
    visual = layer.visual(g, visual);
    audio = layer.audio(g, audio);
    fusion = layer.multimodal(g, fusion, visual, audio);
    if (trace) {
      trace->visual.push_back(visual);
      trace->audio.push_back(audio);
      trace->fusion.push_back(fusion);
    }
  }
  return fusion;
}

}  // namespace damo
