#pragma once

#include <cstdint>
#include <vector>

#include "damo/config.hpp"
#include "damo/grounding.hpp"
#include "damo/tensor.hpp"

namespace damo {

/// Indices of n frames spread evenly over a stream of `total` frames:
/// idx_i = floor((i + 0.5)·total/n).
std::vector<std::size_t> uniform_sample_indices(std::size_t total, std::size_t n);

/// Token ids of the toy vocabulary. Time bins occupy [kBinBase, kBinBase + bins).
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kSeg = 1;
inline constexpr int kUser = 2;
inline constexpr int kAssistant = 3;
inline constexpr int kEvent = 4;
inline constexpr int kQuestionBase = 8;   // 4-token grounding question
inline constexpr int kDescribeBase = 12;  // 4-token "what happens" question
inline constexpr int kBinBase = 16;
inline constexpr std::size_t kQuestionLength = 4;

inline int bin_token(std::size_t bin) { return kBinBase + static_cast<int>(bin); }
std::vector<int> grounding_question();
std::vector<int> describe_question();
}  // namespace vocab

/// Data-generation knobs that are not part of the model geometry.
struct WorldConfig {
  std::uint64_t world_seed = 7;
  double amplitude = 1.0;
  double min_duration = 30.0;
  double max_duration = 120.0;
  double min_length_fraction = 0.1;
  /// Raw frame rate of the underlying stream before uniform sampling.
  double source_fps = 4.0;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

/// Everything needed to regenerate one sample's features.
struct SampleSpec {
  std::uint64_t seed = 0;
  double duration = 0.0;
  Segment target;
};

struct GroundingSample {
  std::uint64_t seed = 0;
  Tensor visual;  // [N×L_v×D_v]
  Tensor audio;   // [M×L_a×D_a]
  double duration = 0.0;
  Segment target;
  std::vector<int> question_tokens;
  std::vector<int> answer_tokens;  // [SEG, bin(start), bin(end)]
};

/// Decoder text for one example: inputs[i] is followed by targets[i]; only
/// positions with mask[i] contribute to the generation loss.
struct TextExample {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<bool> mask;
};

std::size_t time_bin(double t, double duration, std::size_t bins);
/// Bin centre in seconds, so that time_bin(bin_center(b)) == b.
double bin_center(std::size_t bin, double duration, std::size_t bins);
Segment decode_bins(std::size_t start_bin, std::size_t end_bin, double duration, std::size_t bins);

/// Fraction of the window [center − width/2, center + width/2] covered by
/// the event. A sampled frame of n over duration T has width T/n.
double footprint_coverage(double center, double width, const Segment& event);

/// Deterministic stand-in for the frozen encoders and for annotated data.
///
/// Features are N(0,1); every token of a frame (or audio segment) is shifted
/// by coverage·amplitude·signature, where the signature is a fixed unit
/// vector per world seed and coverage is the footprint overlap above.
class SyntheticWorld {
 public:
  SyntheticWorld(ToyConfig cfg, WorldConfig world);

  const ToyConfig& config() const { return cfg_; }
  const WorldConfig& world() const { return world_; }
  const Tensor& visual_signature() const { return visual_signature_; }
  const Tensor& audio_signature() const { return audio_signature_; }

  /// Duration and target drawn from the seed; the target is uniform over
  /// segments of length ≥ min_length_fraction·duration.
  SampleSpec draw_spec(std::uint64_t seed) const;

  /// Frame indices into the raw stream that were sampled.
  std::vector<std::size_t> sampled_frames(double duration) const;

  Tensor encode_video(const SampleSpec& spec) const;
  Tensor encode_audio(const SampleSpec& spec) const;

  GroundingSample make_sample(std::uint64_t seed) const;
  GroundingSample make_sample(const SampleSpec& spec) const;
  std::vector<GroundingSample> make_dataset(std::size_t count, std::uint64_t base_seed) const;

  std::vector<int> answer_tokens(const SampleSpec& spec) const;

 private:
  ToyConfig cfg_;
  WorldConfig world_;
  Tensor visual_signature_;
  Tensor audio_signature_;
};

Tensor encode_video_synthetic(const SyntheticWorld& world, std::uint64_t seed);
Tensor encode_audio_synthetic(const SyntheticWorld& world, std::uint64_t seed);
GroundingSample make_grounding_sample(const SyntheticWorld& world, std::uint64_t seed);

/// Sample seeds of a dataset; seeds are mixed so that nearby bases do not overlap.
std::uint64_t dataset_seed(std::uint64_t base_seed, std::size_t index);

/// Single-turn grounding text: question then [SEG, bin, bin].
TextExample grounding_text(const GroundingSample& s);
/// Two-turn dialogue ending in the grounding answer; only assistant tokens
/// are supervised.
TextExample dialogue_text(const GroundingSample& s);

nlohmann::json sample_descriptor(const GroundingSample& s);
/// Rebuilds a sample (features included) from a descriptor line.
GroundingSample sample_from_descriptor(const SyntheticWorld& world, const nlohmann::json& j);

}  // namespace damo
