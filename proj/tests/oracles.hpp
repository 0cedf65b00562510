#pragma once

// Independent reference implementations used to cross-check the library.

#include <algorithm>
#include <map>
#include <vector>

#include "damo/grounding.hpp"
#include "damo/rng.hpp"

namespace damo::testing {

/// tIoU by sweeping the elementary intervals between the sorted endpoints.
inline double brute_tiou(const Segment& a, const Segment& b) {
  std::vector<double> cuts = {a.start, a.end, b.start, b.end};
  std::sort(cuts.begin(), cuts.end());
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    if (hi <= lo) continue;
    const double mid = 0.5 * (lo + hi);
    const bool in_a = a.start <= mid && mid <= a.end, in_b = b.start <= mid && mid <= b.end;
    if (in_a && in_b) inter += hi - lo;
    if (in_a || in_b) uni += hi - lo;
  }
  if (uni == 0.0) return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
  return inter / uni;
}

struct BruteMetrics {
  double miou = 0.0;
  std::map<double, double> recall_at;
};

inline BruteMetrics brute_metrics(const std::vector<std::vector<Segment>>& preds, const std::vector<Segment>& gts,
                                  const std::vector<double>& thresholds) {
  BruteMetrics m;
  std::vector<double> ious;
  for (std::size_t i = 0; i < gts.size(); ++i) ious.push_back(preds[i].empty() ? 0.0 : brute_tiou(preds[i][0], gts[i]));
  double total = 0.0;
  for (double v : ious) total += v;
  m.miou = gts.empty() ? 0.0 : total / static_cast<double>(gts.size());
  for (double t : thresholds) {
    std::size_t hits = 0;
    for (double v : ious) hits += v >= t ? 1 : 0;
    m.recall_at[t] = gts.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gts.size());
  }
  return m;
}

/// Random valid segment in [0, 100], occasionally degenerate or integral.
inline Segment random_segment(Rng& rng) {
  double a = rng.uniform(0, 100), b = rng.uniform(0, 100);
  switch (rng.index(6)) {
    case 0: b = a; break;
    case 1: a = std::round(a), b = std::round(b); break;
    case 2: a = std::round(a * 10) / 10, b = std::round(b * 10) / 10; break;
    default: break;
  }
  return {std::min(a, b), std::max(a, b)};
}

/// Prediction that overlaps `gt` more often than chance.
inline Segment near_segment(Rng& rng, const Segment& gt) {
  const double len = gt.length() + 1.0;
  double a = gt.start + rng.normal(0, 0.3 * len), b = gt.end + rng.normal(0, 0.3 * len);
  a = std::max(0.0, a);
  b = std::max(0.0, b);
  return {std::min(a, b), std::max(a, b)};
}

}  // namespace damo::testing
