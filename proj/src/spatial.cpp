#include "damo/spatial.hpp"

namespace damo {

GlobalLocalSplit split_global_local(Var features, Modality modality) {
  const Tensor& x = features.value();
  if (x.rank() != 3) throw DimensionError("split_global_local: expected [T×L×D], got " + shape_str(x.shape()));
  if (modality == Modality::kVisual) {
    if (x.dim(1) < 2) throw ContractViolation("split_global_local: visual features need a cls token and one patch");
    return {select_token(features, 0), slice_tokens(features, 1, x.dim(1))};
  }
  return {mean_tokens(features), features};
}

Var adaptive_avg_pool(Var local, std::size_t l_out) { return adaptive_avg_pool_tokens(local, l_out); }

Var global_residual(Graph& g, const GlobalLocalSplit& split, const FeedForward& ffn, std::size_t l_out) {
  const std::size_t d = split.local.dim(2);
  if (split.global.dim(1) != d || ffn.fc1.in != d || ffn.fc2.out != d)
    throw ContractViolation("global_residual: FFN must map " + std::to_string(d) + " -> " + std::to_string(d));
  return add_per_step(adaptive_avg_pool(split.local, l_out), ffn(g, split.global));
}

SpatialPathway SpatialPathway::create(ParameterStore& store, const std::string& name, const std::string& group,
                                      Modality modality, std::size_t dim, std::size_t hidden,
                                      std::size_t pooled_tokens, Rng& rng) {
  SpatialPathway p;
  p.ffn = FeedForward::create(store, name + ".global_ffn", group, dim, hidden, dim, rng);
  p.modality = modality;
  p.pooled_tokens = pooled_tokens;
  return p;
}

Var SpatialPathway::operator()(Graph& g, Var features) const {
  return global_residual(g, split_global_local(features, modality), ffn, pooled_tokens);
}

}  // namespace damo
