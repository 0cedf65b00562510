#pragma once

#include <string>
#include <vector>

#include "damo/config.hpp"
#include "damo/graph.hpp"
#include "damo/nn.hpp"

namespace damo {

/// Symmetric InfoNCE over the similarity matrix E_v·E_tᵀ/τ with the diagonal
/// as positives: the mean of the row-wise and column-wise cross-entropies.
Var vtc_loss(Var video_embeddings, Var text_embeddings, double temperature);

/// Mean two-way cross-entropy of pair logits [B×2] against 0/1 labels.
Var vtm_loss(Var pair_logits, const std::vector<int>& labels);

/// Mean cross-entropy of logits[L×V] over masked positions. An all-false
/// mask yields 0 and, when `warning` is given, a message describing it.
Var vtg_loss(Var logits, const std::vector<int>& targets, const std::vector<bool>& mask,
             std::string* warning = nullptr);

/// In-batch rotation used to build VTM negatives: text i+1 (mod B) is paired
/// with video i.
std::vector<std::size_t> rotation_negatives(std::size_t batch);

/// Stage-1 heads: video/text embedders for VTC, the pair classifier for
/// VTM, and a light generation head over the fused state for VTG.
struct AlignmentHeads {
  Linear video_proj;          // d → d_e
  Parameter* text_embedding;  // [V×d]
  Linear text_proj;           // d → d_e
  Linear match_head;          // 3·d_e → 2
  std::vector<Linear> generation_heads;  // one d → V head per answer token
  double temperature = 0.07;

  static AlignmentHeads create(ParameterStore& store, const std::string& name, const std::string& group,
                               const ToyConfig& cfg, Rng& rng);

  /// Unit-norm video embedding [1×d_e] from the FUSION state [Q_f×d].
  Var embed_video(Graph& g, Var fusion) const;
  /// Unit-norm text embedding [1×d_e]: mean token embedding, projected.
  Var embed_text(Graph& g, const std::vector<int>& tokens) const;
  /// Pair logits [B×2] from row-aligned embeddings [B×d_e].
  Var match_logits(Var video, Var text) const;
  /// Logits [answer_len×V] predicted directly from the pooled FUSION state.
  Var generation_logits(Graph& g, Var fusion) const;
};

}  // namespace damo
