#include "damo/grounding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>

#include "damo/tensor.hpp"

namespace damo {

bool Segment::valid() const { return std::isfinite(start) && std::isfinite(end) && start >= 0.0 && start <= end; }

FormatError::FormatError(Kind kind, std::size_t offset, const std::string& what)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), kind_(kind), offset_(offset) {}

namespace {

class SegmentParser {
 public:
  explicit SegmentParser(std::string_view text) : text_(text) {}

  std::vector<Segment> run() {
    skip_ws();
    expect_word("There");
    require_ws();
    expect_word("are");
    require_ws();
    const std::size_t count_pos = pos_;
    const std::size_t declared = parse_count();
    require_ws();
    expect_word("relevant");
    require_ws();
    expect_word("segment");
    if (peek() == 's') ++pos_;
    skip_ws();
    expect_char(':');
    skip_ws();
    expect_char('[');
    skip_ws();
    std::vector<Segment> out;
    if (peek() != ']') {
      out.push_back(parse_segment());
      skip_ws();
      while (peek() == ',') {
        ++pos_;
        skip_ws();
        out.push_back(parse_segment());
        skip_ws();
      }
    }
    expect_char(']');
    skip_ws();
    if (peek() == '.') ++pos_;
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing text");
    if (out.size() != declared)
      throw FormatError(FormatError::Kind::kCountMismatch, count_pos,
                        "declared " + std::to_string(declared) + " segments but listed " + std::to_string(out.size()));
    return out;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(FormatError::Kind::kSyntax, pos_, what);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::strchr(" \t\r\n", text_[pos_]) != nullptr) ++pos_;
  }

  void require_ws() {
    const std::size_t before = pos_;
    skip_ws();
    if (pos_ == before) fail("expected whitespace");
  }

  void expect_word(std::string_view word) {
    if (text_.substr(pos_, word.size()) != word) fail("expected '" + std::string(word) + "'");
    pos_ += word.size();
  }

  void expect_char(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::size_t parse_count() {
    std::size_t v = 0;
    const char* first = text_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), v);
    if (ec != std::errc() || ptr == first) fail("expected segment count");
    pos_ += static_cast<std::size_t>(ptr - first);
    return v;
  }

  double parse_number() {
    const char c = peek();
    if (!(c == '-' || c == '+' || (c >= '0' && c <= '9'))) fail("expected number");
    const char* first = text_.data() + pos_;
    if (c == '+') ++first;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), v);
    if (ec != std::errc() || ptr == first) fail("malformed number");
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    return v;
  }

  Segment parse_segment() {
    const std::size_t at = pos_;
    expect_char('[');
    skip_ws();
    const double s = parse_number();
    skip_ws();
    expect_char(',');
    skip_ws();
    const double e = parse_number();
    skip_ws();
    expect_char(']');
    const Segment seg{s, e};
    if (!seg.valid())
      throw FormatError(FormatError::Kind::kInvalidSegment, at,
                        "invalid segment [" + format_seconds(s) + ", " + format_seconds(e) + "]");
    return seg;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<Segment> parse_segments(std::string_view text) { return SegmentParser(text).run(); }

std::string format_seconds(double v) {
  char buf[128];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (ec != std::errc()) throw ContractViolation("format_seconds: value not representable");
  std::string s(buf, ptr);
  if (s.find('.') == std::string::npos) s += ".0";
  return s;
}

std::string format_segments(const std::vector<Segment>& segments) {
  std::string out = "There are " + std::to_string(segments.size()) + " relevant segments: [";
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!segments[i].valid()) throw ContractViolation("format_segments: invalid segment at index " + std::to_string(i));
    if (i) out += ", ";
    out += "[" + format_seconds(segments[i].start) + ", " + format_seconds(segments[i].end) + "]";
  }
  return out + "]";
}

double tiou(const Segment& a, const Segment& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

GroundingMetrics evaluate_grounding(const std::vector<std::vector<Segment>>& predictions,
                                    const std::vector<Segment>& ground_truth, const std::vector<double>& thresholds) {
  if (predictions.size() != ground_truth.size())
    throw ContractViolation("evaluate_grounding: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(ground_truth.size()) + " ground-truth segments");
  GroundingMetrics m;
  m.n = ground_truth.size();
  std::map<double, std::size_t> hits;
  for (double t : thresholds) hits[t] = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) {
    const double iou = predictions[i].empty() ? 0.0 : tiou(predictions[i].front(), ground_truth[i]);
    total += iou;
    for (auto& [t, h] : hits)
      if (iou >= t) ++h;
  }
  for (const auto& [t, h] : hits) m.recall_at[t] = m.n ? static_cast<double>(h) / static_cast<double>(m.n) : 0.0;
  m.miou = m.n ? total / static_cast<double>(m.n) : 0.0;
  return m;
}

}  // namespace damo
