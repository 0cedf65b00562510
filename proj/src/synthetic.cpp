#include "damo/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "damo/rng.hpp"

namespace damo {

std::vector<std::size_t> uniform_sample_indices(std::size_t total, std::size_t n) {
  if (n < 1 || n > total)
    throw ContractViolation("uniform_sample_indices: need 1 <= n <= total, got n=" + std::to_string(n) +
                            " total=" + std::to_string(total));
  std::vector<std::size_t> idx(n);
  // (2i + 1)·total / 2n in integer arithmetic is floor((i + 0.5)·total/n).
  for (std::size_t i = 0; i < n; ++i) idx[i] = ((2 * i + 1) * total) / (2 * n);
  return idx;
}

namespace vocab {

std::vector<int> grounding_question() {
  std::vector<int> q(kQuestionLength);
  for (std::size_t i = 0; i < kQuestionLength; ++i) q[i] = kQuestionBase + static_cast<int>(i);
  return q;
}

std::vector<int> describe_question() {
  std::vector<int> q(kQuestionLength);
  for (std::size_t i = 0; i < kQuestionLength; ++i) q[i] = kDescribeBase + static_cast<int>(i);
  return q;
}

}  // namespace vocab

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = {{"world_seed", c.world_seed},     {"amplitude", c.amplitude},
       {"min_duration", c.min_duration}, {"max_duration", c.max_duration},
       {"min_length_fraction", c.min_length_fraction}, {"source_fps", c.source_fps}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  static const std::set<std::string> known = {"world_seed",          "amplitude",  "min_duration", "max_duration",
                                              "min_length_fraction", "source_fps"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ContractViolation("unknown world config key '" + key + "'");
  if (j.contains("world_seed")) j.at("world_seed").get_to(c.world_seed);
  if (j.contains("amplitude")) j.at("amplitude").get_to(c.amplitude);
  if (j.contains("min_duration")) j.at("min_duration").get_to(c.min_duration);
  if (j.contains("max_duration")) j.at("max_duration").get_to(c.max_duration);
  if (j.contains("min_length_fraction")) j.at("min_length_fraction").get_to(c.min_length_fraction);
  if (j.contains("source_fps")) j.at("source_fps").get_to(c.source_fps);
}

std::size_t time_bin(double t, double duration, std::size_t bins) {
  if (!(duration > 0.0)) throw ContractViolation("time_bin: duration must be positive");
  const double b = std::floor(t / duration * static_cast<double>(bins));
  if (b <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(b), bins - 1);
}

double bin_center(std::size_t bin, double duration, std::size_t bins) {
  return (static_cast<double>(bin) + 0.5) * duration / static_cast<double>(bins);
}

Segment decode_bins(std::size_t start_bin, std::size_t end_bin, double duration, std::size_t bins) {
  const auto [lo, hi] = std::minmax(start_bin, end_bin);
  return Segment{bin_center(lo, duration, bins), bin_center(hi, duration, bins)};
}

double footprint_coverage(double center, double width, const Segment& event) {
  const double lo = center - 0.5 * width, hi = center + 0.5 * width;
  const double overlap = std::max(0.0, std::min(hi, event.end) - std::max(lo, event.start));
  return overlap / width;
}

namespace {

Tensor unit_vector(Rng& rng, std::size_t dim) {
  Tensor v = rng.normal_tensor({dim}, 1.0);
  const double n = l2_norm(v);
  for (auto& x : v.data()) x /= n;
  return v;
}

double round_tenth(double v) { return std::round(v * 10.0) / 10.0; }

// Fills [count×tokens×dim] with N(0,1) noise plus coverage-scaled signature.
Tensor event_features(Rng& rng, const std::vector<double>& coverage, std::size_t tokens, const Tensor& signature,
                      double amplitude) {
  const std::size_t dim = signature.size();
  Tensor out({coverage.size(), tokens, dim});
  for (std::size_t t = 0; t < coverage.size(); ++t)
    for (std::size_t l = 0; l < tokens; ++l)
      for (std::size_t k = 0; k < dim; ++k) out.at(t, l, k) = rng.normal() + coverage[t] * amplitude * signature[k];
  return out;
}

}  // namespace

SyntheticWorld::SyntheticWorld(ToyConfig cfg, WorldConfig world) : cfg_(cfg), world_(world) {
  cfg_.validate();
  if (static_cast<std::size_t>(vocab::kBinBase) + cfg_.time_bins > cfg_.vocab)
    throw ContractViolation("vocabulary too small for " + std::to_string(cfg_.time_bins) + " time bins");
  if (!(world_.min_duration > 0.0) || world_.max_duration < world_.min_duration)
    throw ContractViolation("world config: duration range must be positive and ordered");
  if (!(world_.min_length_fraction > 0.0 && world_.min_length_fraction < 1.0))
    throw ContractViolation("world config: min_length_fraction must be in (0, 1)");
  Rng rng(mix_seed(world_.world_seed, 0x516e));
  visual_signature_ = unit_vector(rng, cfg_.visual_dim);
  audio_signature_ = unit_vector(rng, cfg_.audio_dim);
}

SampleSpec SyntheticWorld::draw_spec(std::uint64_t seed) const {
  Rng rng(mix_seed(seed, 1));
  SampleSpec spec;
  spec.seed = seed;
  spec.duration = round_tenth(rng.uniform(world_.min_duration, world_.max_duration));
  const double min_len = world_.min_length_fraction * spec.duration;
  for (;;) {
    const double a = rng.uniform(0.0, spec.duration), b = rng.uniform(0.0, spec.duration);
    const Segment s{round_tenth(std::min(a, b)), round_tenth(std::max(a, b))};
    if (s.length() >= min_len && s.end <= spec.duration) {
      spec.target = s;
      return spec;
    }
  }
}

std::vector<std::size_t> SyntheticWorld::sampled_frames(double duration) const {
  const auto raw = static_cast<std::size_t>(std::llround(duration * world_.source_fps));
  return uniform_sample_indices(std::max(raw, cfg_.n_frames), cfg_.n_frames);
}

Tensor SyntheticWorld::encode_video(const SampleSpec& spec) const {
  const auto idx = sampled_frames(spec.duration);
  const double total = static_cast<double>(std::max(
      static_cast<std::size_t>(std::llround(spec.duration * world_.source_fps)), cfg_.n_frames));
  const double width = spec.duration / static_cast<double>(cfg_.n_frames);
  std::vector<double> coverage(cfg_.n_frames);
  for (std::size_t i = 0; i < cfg_.n_frames; ++i) {
    const double center = (static_cast<double>(idx[i]) + 0.5) / total * spec.duration;
    coverage[i] = footprint_coverage(center, width, spec.target);
  }
  Rng rng(mix_seed(spec.seed, 2));
  return event_features(rng, coverage, cfg_.visual_tokens, visual_signature_, world_.amplitude);
}

Tensor SyntheticWorld::encode_audio(const SampleSpec& spec) const {
  const double width = spec.duration / static_cast<double>(cfg_.n_audio);
  std::vector<double> coverage(cfg_.n_audio);
  for (std::size_t j = 0; j < cfg_.n_audio; ++j)
    coverage[j] = footprint_coverage((static_cast<double>(j) + 0.5) * width, width, spec.target);
  Rng rng(mix_seed(spec.seed, 3));
  return event_features(rng, coverage, cfg_.audio_tokens, audio_signature_, world_.amplitude);
}

std::vector<int> SyntheticWorld::answer_tokens(const SampleSpec& spec) const {
  return {vocab::kSeg, vocab::bin_token(time_bin(spec.target.start, spec.duration, cfg_.time_bins)),
          vocab::bin_token(time_bin(spec.target.end, spec.duration, cfg_.time_bins))};
}

GroundingSample SyntheticWorld::make_sample(const SampleSpec& spec) const {
  if (!spec.target.valid() || !(spec.target.start < spec.target.end) || spec.target.end > spec.duration)
    throw ContractViolation("sample target must satisfy 0 <= start < end <= duration");
  GroundingSample s;
  s.seed = spec.seed;
  s.visual = encode_video(spec);
  s.audio = encode_audio(spec);
  s.duration = spec.duration;
  s.target = spec.target;
  s.question_tokens = vocab::grounding_question();
  s.answer_tokens = answer_tokens(spec);
  return s;
}

GroundingSample SyntheticWorld::make_sample(std::uint64_t seed) const { return make_sample(draw_spec(seed)); }

std::uint64_t dataset_seed(std::uint64_t base_seed, std::size_t index) { return mix_seed(base_seed, index + 1); }

std::vector<GroundingSample> SyntheticWorld::make_dataset(std::size_t count, std::uint64_t base_seed) const {
  std::vector<GroundingSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_sample(dataset_seed(base_seed, i)));
  return out;
}

Tensor encode_video_synthetic(const SyntheticWorld& world, std::uint64_t seed) {
  return world.encode_video(world.draw_spec(seed));
}

Tensor encode_audio_synthetic(const SyntheticWorld& world, std::uint64_t seed) {
  return world.encode_audio(world.draw_spec(seed));
}

GroundingSample make_grounding_sample(const SyntheticWorld& world, std::uint64_t seed) {
  return world.make_sample(seed);
}

namespace {

TextExample shifted(const std::vector<int>& seq, const std::vector<bool>& supervised) {
  TextExample ex;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    ex.inputs.push_back(seq[i]);
    ex.targets.push_back(seq[i + 1]);
    ex.mask.push_back(supervised[i + 1]);
  }
  return ex;
}

}  // namespace

TextExample grounding_text(const GroundingSample& s) {
  std::vector<int> seq = s.question_tokens;
  std::vector<bool> supervised(seq.size(), false);
  for (int t : s.answer_tokens) {
    seq.push_back(t);
    supervised.push_back(true);
  }
  return shifted(seq, supervised);
}

TextExample dialogue_text(const GroundingSample& s) {
  std::vector<int> seq;
  std::vector<bool> supervised;
  auto push = [&](int tok, bool sup) {
    seq.push_back(tok);
    supervised.push_back(sup);
  };
  push(vocab::kUser, false);
  for (int t : vocab::describe_question()) push(t, false);
  push(vocab::kAssistant, false);
  push(vocab::kEvent, true);
  push(vocab::kUser, false);
  for (int t : s.question_tokens) push(t, false);
  push(vocab::kAssistant, false);
  for (int t : s.answer_tokens) push(t, true);
  return shifted(seq, supervised);
}

nlohmann::json sample_descriptor(const GroundingSample& s) {
  return {{"seed", s.seed},
          {"duration", s.duration},
          {"target", {s.target.start, s.target.end}},
          {"question_tokens", s.question_tokens},
          {"answer_tokens", s.answer_tokens}};
}

GroundingSample sample_from_descriptor(const SyntheticWorld& world, const nlohmann::json& j) {
  SampleSpec spec;
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.duration = j.at("duration").get<double>();
  const auto& t = j.at("target");
  if (!t.is_array() || t.size() != 2) throw ContractViolation("descriptor target must be [start, end]");
  spec.target = Segment{t[0].get<double>(), t[1].get<double>()};
  GroundingSample s = world.make_sample(spec);
  if (j.contains("answer_tokens") && j.at("answer_tokens").get<std::vector<int>>() != s.answer_tokens)
    throw ContractViolation("descriptor answer tokens disagree with its target segment (seed " +
                            std::to_string(spec.seed) + ")");
  if (j.contains("question_tokens")) s.question_tokens = j.at("question_tokens").get<std::vector<int>>();
  return s;
}

}  // namespace damo
