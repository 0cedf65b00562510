#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace damo {

/// Temporal interval in seconds.
struct Segment {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool valid() const;
  bool operator==(const Segment&) const = default;
};

/// Parse failure in structured grounding output. `offset` is the byte
/// position in the input where the problem was detected.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { kSyntax, kCountMismatch, kInvalidSegment };

  FormatError(Kind kind, std::size_t offset, const std::string& what);
  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

/// Parses `There are X relevant segments: [[s1, e1], [s2, e2], ...]`.
/// Whitespace is free between tokens; "segment" and "segments" are both
/// accepted; endpoints may be integers or decimals.
std::vector<Segment> parse_segments(std::string_view text);

/// Canonical rendering; every endpoint carries at least one decimal place and
/// round-trips exactly through parse_segments.
std::string format_segments(const std::vector<Segment>& segments);

/// Shortest decimal text that reads back to `v`, with at least one decimal.
std::string format_seconds(double v);

/// Temporal IoU. Identical points give 1; a zero-length union otherwise 0.
double tiou(const Segment& a, const Segment& b);

struct GroundingMetrics {
  std::map<double, double> recall_at;
  double miou = 0.0;
  std::size_t n = 0;
};

inline const std::vector<double> kDefaultThresholds = {0.3, 0.5, 0.7};

/// Top-1 evaluation: the first listed segment of each prediction is scored
/// against the ground truth; an empty prediction scores tIoU 0.
GroundingMetrics evaluate_grounding(const std::vector<std::vector<Segment>>& predictions,
                                    const std::vector<Segment>& ground_truth,
                                    const std::vector<double>& thresholds = kDefaultThresholds);

}  // namespace damo
