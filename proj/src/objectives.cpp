#include "damo/objectives.hpp"

#include <algorithm>
#include <numeric>

namespace damo {

Var vtc_loss(Var video_embeddings, Var text_embeddings, double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("vtc_loss: temperature must be positive");
  const std::size_t b = video_embeddings.dim(0);
  if (b == 0 || text_embeddings.dim(0) != b)
    throw DimensionError("vtc_loss: batches of " + std::to_string(b) + " and " +
                         std::to_string(text_embeddings.dim(0)) + " embeddings");
  std::vector<int> diagonal(b);
  std::iota(diagonal.begin(), diagonal.end(), 0);
  Var logits = scale(matmul_nt(video_embeddings, text_embeddings), 1.0 / temperature);
  return scale(add(cross_entropy(logits, diagonal), cross_entropy(transpose(logits), diagonal)), 0.5);
}

Var vtm_loss(Var pair_logits, const std::vector<int>& labels) {
  if (pair_logits.value().rank() != 2 || pair_logits.dim(1) != 2)
    throw DimensionError("vtm_loss expects [B×2] logits, got " + shape_str(pair_logits.shape()));
  for (int l : labels)
    if (l != 0 && l != 1) throw ContractViolation("vtm_loss: label " + std::to_string(l) + " is not 0 or 1");
  return cross_entropy(pair_logits, labels);
}

Var vtg_loss(Var logits, const std::vector<int>& targets, const std::vector<bool>& mask, std::string* warning) {
  if (logits.dim(0) != targets.size() || targets.size() != mask.size())
    throw DimensionError("vtg_loss: " + std::to_string(logits.dim(0)) + " logit rows, " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) + " mask entries");
  if (warning && std::none_of(mask.begin(), mask.end(), [](bool m) { return m; }))
    *warning = "vtg_loss: every position is masked; loss defined as 0";
  return cross_entropy(logits, targets, mask);
}

std::vector<std::size_t> rotation_negatives(std::size_t batch) {
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = (i + 1) % batch;
  return idx;
}

AlignmentHeads AlignmentHeads::create(ParameterStore& store, const std::string& name, const std::string& group,
                                      const ToyConfig& cfg, Rng& rng) {
  AlignmentHeads h;
  const std::size_t d = cfg.model_dim, de = cfg.embed_dim;
  h.video_proj = Linear::create(store, name + ".video_proj", group, d, de, rng);
  h.text_embedding = &store.add(name + ".text_embedding", group, rng.normal_tensor({cfg.vocab, d}, 1.0));
  h.text_proj = Linear::create(store, name + ".text_proj", group, d, de, rng);
  h.match_head = Linear::create(store, name + ".match_head", group, 3 * de, 2, rng);
  for (std::size_t k = 0; k < 3; ++k)
    h.generation_heads.push_back(
        Linear::create(store, name + ".generation_head" + std::to_string(k), group, d, cfg.vocab, rng));
  h.temperature = cfg.temperature;
  return h;
}

Var AlignmentHeads::embed_video(Graph& g, Var fusion) const {
  return l2_normalize_rows(video_proj(g, mean_rows(fusion)));
}

Var AlignmentHeads::embed_text(Graph& g, const std::vector<int>& tokens) const {
  return l2_normalize_rows(text_proj(g, mean_rows(gather_rows(g.param(*text_embedding), tokens))));
}

Var AlignmentHeads::match_logits(Var video, Var text) const {
  Var pair = concat_cols({mul(video, text), video, text});
  return match_head(*video.graph, pair);
}

Var AlignmentHeads::generation_logits(Graph& g, Var fusion) const {
  Var pooled = mean_rows(fusion);
  std::vector<Var> rows;
  for (const auto& head : generation_heads) rows.push_back(head(g, pooled));
  return concat_rows(rows);
}

}  // namespace damo
