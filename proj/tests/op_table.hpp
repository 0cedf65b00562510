#pragma once

// Every differentiable graph op with small input shapes, for gradient
// checking in the unit tests and the acceptance binary.

#include <functional>
#include <vector>

#include "damo/graph.hpp"

namespace damo::testing {

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(Graph&, const std::vector<Var>&)> op;
};

inline std::vector<OpCase> differentiable_ops() {
  using V = const std::vector<Var>&;
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Graph&, V x) { return matmul(x[0], x[1]); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, [](Graph&, V x) { return matmul_nt(x[0], x[1]); }},
      {"transpose", {{3, 4}}, [](Graph&, V x) { return transpose(x[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](Graph&, V x) { return add(x[0], x[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](Graph&, V x) { return sub(x[0], x[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Graph&, V x) { return mul(x[0], x[1]); }},
      {"scale", {{2, 3}}, [](Graph&, V x) { return scale(x[0], -1.7); }},
      {"add_rowwise", {{3, 4}, {4}}, [](Graph&, V x) { return add_rowwise(x[0], x[1]); }},
      {"add_per_step", {{2, 3, 4}, {2, 4}}, [](Graph&, V x) { return add_per_step(x[0], x[1]); }},
      {"gelu", {{3, 4}}, [](Graph&, V x) { return gelu(x[0]); }},
      {"softmax_rows", {{3, 5}}, [](Graph&, V x) { return softmax_rows(x[0]); }},
      {"attention", {{3, 4}, {3, 4}, {3, 4}}, [](Graph&, V x) { return attention(x[0], x[1], x[2]); }},
      {"attention_causal", {{3, 4}, {5, 4}, {5, 2}}, [](Graph&, V x) { return attention(x[0], x[1], x[2], true); }},
      {"layer_norm", {{3, 5}, {5}, {5}}, [](Graph&, V x) { return layer_norm(x[0], x[1], x[2]); }},
      {"l2_normalize_rows", {{3, 4}}, [](Graph&, V x) { return l2_normalize_rows(x[0]); }},
      {"sum", {{2, 3}}, [](Graph&, V x) { return sum(x[0]); }},
      {"mean", {{2, 3}}, [](Graph&, V x) { return mean(x[0]); }},
      {"mean_rows", {{4, 3}}, [](Graph&, V x) { return mean_rows(x[0]); }},
      {"reshape", {{2, 6}}, [](Graph&, V x) { return reshape(x[0], {3, 4}); }},
      {"slice_rows", {{5, 3}}, [](Graph&, V x) { return slice_rows(x[0], 1, 4); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](Graph&, V x) { return concat_rows({x[0], x[1]}); }},
      {"slice_cols", {{3, 5}}, [](Graph&, V x) { return slice_cols(x[0], 1, 3); }},
      {"concat_cols", {{3, 2}, {3, 1}}, [](Graph&, V x) { return concat_cols({x[0], x[1]}); }},
      {"gather_rows", {{4, 3}}, [](Graph&, V x) { return gather_rows(x[0], {2, 0, 2, 3}); }},
      {"select_token", {{2, 3, 4}}, [](Graph&, V x) { return select_token(x[0], 1); }},
      {"slice_tokens", {{2, 4, 3}}, [](Graph&, V x) { return slice_tokens(x[0], 1, 3); }},
      {"mean_tokens", {{2, 3, 4}}, [](Graph&, V x) { return mean_tokens(x[0]); }},
      {"adaptive_avg_pool_tokens", {{2, 5, 3}}, [](Graph&, V x) { return adaptive_avg_pool_tokens(x[0], 3); }},
      {"grouped_conv2d",
       {{6, 4, 5}, {2, 3, 3, 3}, {2}},
       [](Graph&, V x) { return grouped_conv2d(x[0], x[1], x[2], 2, 1); }},
      {"cross_entropy",
       {{4, 6}},
       [](Graph&, V x) { return cross_entropy(x[0], {1, 5, 0, 2}, {true, false, true, true}); }},
      {"weighted_sum", {{2, 3}}, [](Graph&, V x) { return weighted_sum(x[0], Tensor({2, 3}, {1, -2, 3, 0.5, 4, -1})); }},
  };
}

}  // namespace damo::testing
