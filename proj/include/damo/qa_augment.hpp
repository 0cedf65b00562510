#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "damo/grounding.hpp"
#include "json.hpp"

namespace damo {

struct TimedSegment {
  double start = 0.0;
  double end = 0.0;
  std::string description;
};

struct TimedAnnotation {
  std::string video_id;
  double duration = 0.0;
  std::vector<TimedSegment> segments;
};

struct QAPair {
  std::string video_id;
  std::string question;
  std::string answer;
  std::vector<Segment> segments;
};

struct Turn {
  std::string role;  // "user" or "assistant"
  std::string text;
};

struct Dialogue {
  std::string video_id;
  std::vector<Turn> turns;
  /// One entry per turn; set only on assistant turns that carry a timestamp.
  std::vector<std::optional<Segment>> segments;
};

void to_json(nlohmann::json& j, const TimedAnnotation& a);
void from_json(const nlohmann::json& j, TimedAnnotation& a);
void to_json(nlohmann::json& j, const QAPair& q);
void from_json(const nlohmann::json& j, QAPair& q);
void to_json(nlohmann::json& j, const Dialogue& d);
void from_json(const nlohmann::json& j, Dialogue& d);

/// Seconds rendered with exactly one decimal, e.g. 12.4 → "12.4".
std::string one_decimal(double seconds);
/// "from 12.4s to 25.0s"
std::string temporal_phrase(const Segment& s);

struct QAGenerationResult {
  std::vector<QAPair> pairs;
  /// One record per skipped segment.
  std::vector<std::string> warnings;
};

/// Number of question templates in the fixed bank.
std::size_t question_template_count();

/// One QA pair per annotated segment. The question template is picked by a
/// seeded hash of (video_id, segment index); the answer carries the event
/// description and its temporal phrase. Segments with an empty description
/// are skipped with a warning. Throws ContractViolation on an invalid
/// annotation.
QAGenerationResult generate_qa(const TimedAnnotation& ann, std::uint64_t seed);

/// The same pair rendered for grounding training: the answer becomes the
/// structured segment list.
QAPair to_grounding_format(const QAPair& qa);

/// Appends "(from Xs to Ys)" to each aligned assistant turn that does not
/// already end with that reference. Throws ContractViolation when the
/// segment list is not turn-aligned, is attached to a user turn, or when
/// roles do not alternate starting with the user.
Dialogue enrich_dialogue(const Dialogue& d, std::uint64_t seed);

struct ValidationReport {
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

inline constexpr double kEndpointTolerance = 0.05;

/// Checks endpoint fidelity (every timestamp in the answer matches an
/// endpoint of a source segment within 0.05 s, and every recorded segment
/// matches a source segment), containment in [0, duration] and, for
/// structured answers, parseability. Never throws.
ValidationReport validate_qa(const QAPair& qa, const TimedAnnotation& ann);

/// Seconds values mentioned in free text as "<number>s".
std::vector<double> extract_timestamps(const std::string& text);

enum class PromptKind { kQaGen, kDialogueEnrich, kInstruction };

std::string to_string(PromptKind k);
PromptKind prompt_kind_from_string(const std::string& s);

struct RewriteRequest {
  std::string prompt;
  int max_tokens = 256;
  std::optional<std::uint64_t> seed;
};

struct RewriteResponse {
  std::string text;
};

/// Text-generation client contract. Implementations may use any transport
/// and may throw to signal failure or timeout.
class TextRewriter {
 public:
  virtual ~TextRewriter() = default;
  virtual RewriteResponse rewrite(const RewriteRequest& request) = 0;
};

/// Stored prompt texts keyed by kind. The instruction template is emitted
/// verbatim.
const std::string& prompt_template(PromptKind kind);

/// Payload for rewrite_via_external.
struct RewritePayload {
  TimedAnnotation annotation;
  std::size_t segment_index = 0;  // qa_gen
  Dialogue dialogue;              // dialogue_enrich
  std::uint64_t seed = 0;
};

/// Deterministic in-process client: renders the template engine's output
/// for the payload encoded in the request prompt.
class TemplateRewriter : public TextRewriter {
 public:
  RewriteResponse rewrite(const RewriteRequest& request) override;
};

struct RewriteResult {
  std::string text;
  bool used_fallback = false;
  std::vector<std::string> failures;
};

/// The prompt sent to a client for this payload: the stored template
/// followed by a JSON block describing the payload.
std::string build_prompt(PromptKind kind, const RewritePayload& payload);

/// Asks `client` for a rewrite. QA answers are validated and dialogue
/// rewrites must keep every timestamp; on a client failure or a rejected
/// result the deterministic template output is returned instead and the
/// reason is recorded.
RewriteResult rewrite_via_external(PromptKind kind, const RewritePayload& payload, TextRewriter& client);

}  // namespace damo
