#include "damo/qa_augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <regex>

#include "damo/hash.hpp"
#include "damo/tensor.hpp"

namespace damo {

void to_json(nlohmann::json& j, const TimedAnnotation& a) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : a.segments) segs.push_back({{"start", s.start}, {"end", s.end}, {"description", s.description}});
  j = {{"video_id", a.video_id}, {"duration", a.duration}, {"segments", segs}};
}

void from_json(const nlohmann::json& j, TimedAnnotation& a) {
  j.at("video_id").get_to(a.video_id);
  j.at("duration").get_to(a.duration);
  a.segments.clear();
  for (const auto& s : j.at("segments"))
    a.segments.push_back({s.at("start").get<double>(), s.at("end").get<double>(), s.value("description", std::string())});
}

namespace {
nlohmann::json segment_json(const Segment& s) { return {s.start, s.end}; }
Segment segment_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw ContractViolation("a segment must be a [start, end] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}
}  // namespace

void to_json(nlohmann::json& j, const QAPair& q) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : q.segments) segs.push_back(segment_json(s));
  j = {{"video_id", q.video_id}, {"question", q.question}, {"answer", q.answer}, {"segments", segs}};
}

void from_json(const nlohmann::json& j, QAPair& q) {
  j.at("video_id").get_to(q.video_id);
  j.at("question").get_to(q.question);
  j.at("answer").get_to(q.answer);
  q.segments.clear();
  for (const auto& s : j.at("segments")) q.segments.push_back(segment_from(s));
}

void to_json(nlohmann::json& j, const Dialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    nlohmann::json t = {{"role", d.turns[i].role}, {"text", d.turns[i].text}};
    if (i < d.segments.size() && d.segments[i]) t["segment"] = segment_json(*d.segments[i]);
    turns.push_back(t);
  }
  j = {{"video_id", d.video_id}, {"turns", turns}};
}

void from_json(const nlohmann::json& j, Dialogue& d) {
  j.at("video_id").get_to(d.video_id);
  d.turns.clear();
  d.segments.clear();
  for (const auto& t : j.at("turns")) {
    d.turns.push_back({t.at("role").get<std::string>(), t.at("text").get<std::string>()});
    d.segments.push_back(t.contains("segment") ? std::optional<Segment>(segment_from(t.at("segment"))) : std::nullopt);
  }
}

std::string one_decimal(double seconds) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), seconds, std::chars_format::fixed, 1);
  if (ec != std::errc()) throw ContractViolation("one_decimal: value not representable");
  return std::string(buf, ptr);
}

std::string temporal_phrase(const Segment& s) {
  return "from " + one_decimal(s.start) + "s to " + one_decimal(s.end) + "s";
}

namespace {

// Question bank. {e} is replaced by the event description.
const std::vector<std::string>& question_bank() {
  static const std::vector<std::string> bank = {
      "When does the moment \"{e}\" happen in the video?",
      "At what time can we see that {e}?",
      "During which part of the video does the following occur: {e}?",
      "Can you locate the segment where {e}?",
      "Find the start and end time of this event: {e}.",
      "In which time span is it shown that {e}?",
  };
  return bank;
}

std::string fill(std::string tmpl, const std::string& key, const std::string& value) {
  for (std::size_t pos; (pos = tmpl.find(key)) != std::string::npos;) tmpl.replace(pos, key.size(), value);
  return tmpl;
}

std::size_t template_choice(const std::string& video_id, std::size_t index, std::uint64_t seed) {
  const std::string key = video_id + '\x1f' + std::to_string(index) + '\x1f' + std::to_string(seed);
  const std::string digest = sha256_hex(key.data(), key.size());
  return static_cast<std::size_t>(std::stoull(digest.substr(0, 15), nullptr, 16) % question_bank().size());
}

Segment rounded(const Segment& s) { return {std::round(s.start * 10.0) / 10.0, std::round(s.end * 10.0) / 10.0}; }

void check_annotation(const TimedAnnotation& ann) {
  if (!(std::isfinite(ann.duration) && ann.duration > 0.0))
    throw ContractViolation("annotation '" + ann.video_id + "': duration must be positive");
  for (std::size_t i = 0; i < ann.segments.size(); ++i) {
    const auto& s = ann.segments[i];
    if (!(s.start >= 0.0 && s.start < s.end && s.end <= ann.duration))
      throw ContractViolation("annotation '" + ann.video_id + "' segment " + std::to_string(i) +
                              ": need 0 <= start < end <= duration");
  }
}

QAPair qa_for_segment(const TimedAnnotation& ann, std::size_t index, std::uint64_t seed) {
  const auto& s = ann.segments[index];
  const Segment seg{s.start, s.end};
  QAPair qa;
  qa.video_id = ann.video_id;
  qa.question = fill(question_bank()[template_choice(ann.video_id, index, seed)], "{e}", s.description);
  qa.answer = "The event \"" + s.description + "\" takes place " + temporal_phrase(seg) + ".";
  qa.segments = {seg};
  return qa;
}

bool close(double a, double b) { return std::abs(a - b) <= kEndpointTolerance + 1e-9; }

}  // namespace

std::size_t question_template_count() { return question_bank().size(); }

QAGenerationResult generate_qa(const TimedAnnotation& ann, std::uint64_t seed) {
  check_annotation(ann);
  QAGenerationResult out;
  for (std::size_t i = 0; i < ann.segments.size(); ++i) {
    if (ann.segments[i].description.empty()) {
      out.warnings.push_back("video '" + ann.video_id + "' segment " + std::to_string(i) +
                             ": empty description, skipped");
      continue;
    }
    out.pairs.push_back(qa_for_segment(ann, i, seed));
  }
  return out;
}

QAPair to_grounding_format(const QAPair& qa) {
  QAPair g = qa;
  std::vector<Segment> segs;
  for (const auto& s : qa.segments) segs.push_back(rounded(s));
  g.answer = format_segments(segs);
  return g;
}

Dialogue enrich_dialogue(const Dialogue& d, std::uint64_t /*seed*/) {
  if (!d.segments.empty() && d.segments.size() != d.turns.size())
    throw ContractViolation("dialogue '" + d.video_id + "': " + std::to_string(d.segments.size()) +
                            " segment slots for " + std::to_string(d.turns.size()) + " turns");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const std::string expected = i % 2 == 0 ? "user" : "assistant";
    if (d.turns[i].role != expected)
      throw ContractViolation("dialogue '" + d.video_id + "': turn " + std::to_string(i) + " should be " + expected);
    if (i < d.segments.size() && d.segments[i] && expected != "assistant")
      throw ContractViolation("dialogue '" + d.video_id + "': segment aligned to user turn " + std::to_string(i));
    if (i < d.segments.size() && d.segments[i] && !d.segments[i]->valid())
      throw ContractViolation("dialogue '" + d.video_id + "': invalid segment on turn " + std::to_string(i));
  }
  Dialogue out = d;
  for (std::size_t i = 0; i < out.segments.size(); ++i) {
    if (!out.segments[i]) continue;
    const std::string marker = "(" + temporal_phrase(*out.segments[i]) + ")";
    std::string& text = out.turns[i].text;
    if (text.find(marker) != std::string::npos) continue;
    text += text.empty() ? marker : " " + marker;
  }
  return out;
}

std::vector<double> extract_timestamps(const std::string& text) {
  static const std::regex re(R"((\d+(?:\.\d+)?)s\b)");
  std::vector<double> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back(std::stod((*it)[1].str()));
  return out;
}

ValidationReport validate_qa(const QAPair& qa, const TimedAnnotation& ann) {
  ValidationReport r;
  if (qa.video_id != ann.video_id) r.failures.push_back("video id '" + qa.video_id + "' does not match annotation '" + ann.video_id + "'");

  auto matches_source = [&](const Segment& s) {
    return std::any_of(ann.segments.begin(), ann.segments.end(),
                       [&](const TimedSegment& src) { return close(s.start, src.start) && close(s.end, src.end); });
  };
  for (const auto& s : qa.segments) {
    if (!s.valid() || s.start < 0.0 || s.end > ann.duration)
      r.failures.push_back("containment: segment [" + one_decimal(s.start) + ", " + one_decimal(s.end) +
                           "] outside [0, " + one_decimal(ann.duration) + "]");
    if (!matches_source(s))
      r.failures.push_back("endpoint fidelity: segment [" + one_decimal(s.start) + ", " + one_decimal(s.end) +
                           "] matches no source segment");
  }

  std::vector<double> stamps;
  const bool structured = qa.answer.rfind("There are", 0) == 0;
  if (structured) {
    try {
      for (const auto& s : parse_segments(qa.answer)) {
        stamps.push_back(s.start);
        stamps.push_back(s.end);
      }
    } catch (const FormatError& e) {
      r.failures.push_back(std::string("grammar: ") + e.what());
    }
  } else {
    stamps = extract_timestamps(qa.answer);
  }
  std::vector<double> expected;
  for (const auto& s : qa.segments) {
    expected.push_back(s.start);
    expected.push_back(s.end);
  }
  if (stamps.size() != expected.size()) {
    r.failures.push_back("endpoint fidelity: answer mentions " + std::to_string(stamps.size()) + " timestamps, expected " +
                         std::to_string(expected.size()));
  } else {
    for (std::size_t i = 0; i < stamps.size(); ++i)
      if (!close(stamps[i], expected[i]))
        r.failures.push_back("endpoint fidelity: answer timestamp " + one_decimal(stamps[i]) + "s vs source " +
                             one_decimal(expected[i]) + "s");
  }
  return r;
}

std::string to_string(PromptKind k) {
  switch (k) {
    case PromptKind::kQaGen: return "qa_gen";
    case PromptKind::kDialogueEnrich: return "dialogue_enrich";
    case PromptKind::kInstruction: return "instruction";
  }
  return "?";
}

PromptKind prompt_kind_from_string(const std::string& s) {
  if (s == "qa_gen") return PromptKind::kQaGen;
  if (s == "dialogue_enrich") return PromptKind::kDialogueEnrich;
  if (s == "instruction") return PromptKind::kInstruction;
  throw ContractViolation("unknown prompt kind '" + s + "'");
}

const std::string& prompt_template(PromptKind kind) {
  static const std::map<PromptKind, std::string> templates = {
      {PromptKind::kQaGen,
       "You are given one timestamped event description from a video. Write a natural question asking when the "
       "event happens and an answer that restates the event and gives its time span exactly as \"from Xs to Ys\" "
       "with one decimal place. Do not change the timestamps."},
      {PromptKind::kDialogueEnrich,
       "You are given a multi-turn conversation about a video and the time span that each assistant reply refers "
       "to. Revise the assistant replies so that each one explicitly mentions its time span as \"(from Xs to Ys)\". "
       "Keep user turns and the number of turns unchanged."},
      {PromptKind::kInstruction,
       "Find all segments of the video that match the query. Answer only in the format: "
       "There are X relevant segments: [[start_1, end_1], [start_2, end_2], ...] where start and end are in "
       "seconds."},
  };
  return templates.at(kind);
}

namespace {
constexpr const char* kPayloadMarker = "\n--- payload ---\n";
}

std::string build_prompt(PromptKind kind, const RewritePayload& payload) {
  nlohmann::json p = {{"kind", to_string(kind)}, {"seed", payload.seed}};
  if (kind == PromptKind::kQaGen) {
    p["annotation"] = payload.annotation;
    p["segment_index"] = payload.segment_index;
  } else if (kind == PromptKind::kDialogueEnrich) {
    p["dialogue"] = payload.dialogue;
  }
  return prompt_template(kind) + kPayloadMarker + p.dump();
}

namespace {

std::string template_output(PromptKind kind, const RewritePayload& payload) {
  switch (kind) {
    case PromptKind::kQaGen:
      check_annotation(payload.annotation);
      if (payload.segment_index >= payload.annotation.segments.size())
        throw ContractViolation("segment_index " + std::to_string(payload.segment_index) + " out of range");
      return qa_for_segment(payload.annotation, payload.segment_index, payload.seed).answer;
    case PromptKind::kDialogueEnrich:
      return nlohmann::json(enrich_dialogue(payload.dialogue, payload.seed)).dump();
    case PromptKind::kInstruction:
      return prompt_template(PromptKind::kInstruction);
  }
  return {};
}

}  // namespace

RewriteResponse TemplateRewriter::rewrite(const RewriteRequest& request) {
  const auto at = request.prompt.find(kPayloadMarker);
  if (at == std::string::npos) throw ContractViolation("template rewriter: prompt carries no payload block");
  const auto p = nlohmann::json::parse(request.prompt.substr(at + std::string(kPayloadMarker).size()));
  const PromptKind kind = prompt_kind_from_string(p.at("kind").get<std::string>());
  RewritePayload payload;
  payload.seed = p.at("seed").get<std::uint64_t>();
  if (kind == PromptKind::kQaGen) {
    payload.annotation = p.at("annotation").get<TimedAnnotation>();
    payload.segment_index = p.at("segment_index").get<std::size_t>();
  } else if (kind == PromptKind::kDialogueEnrich) {
    payload.dialogue = p.at("dialogue").get<Dialogue>();
  }
  return {template_output(kind, payload)};
}

RewriteResult rewrite_via_external(PromptKind kind, const RewritePayload& payload, TextRewriter& client) {
  RewriteResult result;
  const std::string fallback = template_output(kind, payload);
  std::string text;
  try {
    text = client.rewrite(RewriteRequest{build_prompt(kind, payload), 256, payload.seed}).text;
  } catch (const std::exception& e) {
    result.failures.push_back(std::string("client failure: ") + e.what());
  }
  if (result.failures.empty()) {
    if (kind == PromptKind::kQaGen) {
      QAPair candidate = qa_for_segment(payload.annotation, payload.segment_index, payload.seed);
      candidate.answer = text;
      for (const auto& f : validate_qa(candidate, payload.annotation).failures) result.failures.push_back(f);
    } else if (kind == PromptKind::kDialogueEnrich) {
      try {
        const Dialogue got = nlohmann::json::parse(text).get<Dialogue>();
        const Dialogue& src = payload.dialogue;
        if (got.turns.size() != src.turns.size()) result.failures.push_back("dialogue rewrite changed the turn count");
        for (std::size_t i = 0; i < std::min(got.turns.size(), src.turns.size()); ++i) {
          if (got.turns[i].role != src.turns[i].role) result.failures.push_back("turn " + std::to_string(i) + ": role changed");
          if (i < src.segments.size() && src.segments[i] &&
              got.turns[i].text.find(temporal_phrase(*src.segments[i])) == std::string::npos)
            result.failures.push_back("turn " + std::to_string(i) + ": temporal reference missing");
        }
      } catch (const std::exception& e) {
        result.failures.push_back(std::string("dialogue rewrite is not a dialogue: ") + e.what());
      }
    } else if (text.empty()) {
      result.failures.push_back("empty instruction text");
    }
  }
  result.used_fallback = !result.failures.empty();
  result.text = result.used_fallback ? fallback : text;
  return result;
}

}  // namespace damo
