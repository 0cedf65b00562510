#include <gtest/gtest.h>

#include <set>

#include "annotation_fixtures.hpp"
#include "damo/qa_augment.hpp"
#include "damo/rng.hpp"

using namespace damo;
using damo::testing::random_annotation;

namespace {

TimedAnnotation door() { return {"v1", 60.0, {{12.4, 25.0, "person opens door"}}}; }

class FailingClient : public TextRewriter {
 public:
  RewriteResponse rewrite(const RewriteRequest&) override { throw std::runtime_error("timeout after 30 s"); }
};

class FixedClient : public TextRewriter {
 public:
  explicit FixedClient(std::string text) : text_(std::move(text)) {}
  RewriteResponse rewrite(const RewriteRequest&) override { return {text_}; }

 private:
  std::string text_;
};

}  // namespace

TEST(GenerateQa, WorkedExample) {
  const auto r = generate_qa(door(), 0);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_NE(r.pairs[0].question.find("open"), std::string::npos);
  EXPECT_NE(r.pairs[0].answer.find("from 12.4s to 25.0s"), std::string::npos);
  EXPECT_NE(r.pairs[0].answer.find("person opens door"), std::string::npos);
  EXPECT_EQ(r.pairs[0].segments, (std::vector<Segment>{{12.4, 25.0}}));
}

TEST(GenerateQa, DeterminismCardinalityAndTemplateSpread) {
  TimedAnnotation a{"v2", 100, {{1, 5, "a"}, {10, 20, "b"}, {30, 31.5, "c"}}};
  const auto r1 = generate_qa(a, 3), r2 = generate_qa(a, 3);
  ASSERT_EQ(r1.pairs.size(), 3u);
  EXPECT_EQ(nlohmann::json(r1.pairs).dump(), nlohmann::json(r2.pairs).dump());
  EXPECT_GE(question_template_count(), 5u);
  std::set<std::string> questions;
  for (std::uint64_t seed = 0; seed < 50; ++seed) questions.insert(generate_qa(door(), seed).pairs[0].question);
  EXPECT_GE(questions.size(), 4u);
}

TEST(GenerateQa, EmptyDescriptionSkippedAndInvalidRejected) {
  TimedAnnotation a{"v3", 50, {{1, 5, ""}, {6, 9, "x"}}};
  const auto r = generate_qa(a, 0);
  EXPECT_EQ(r.pairs.size(), 1u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("segment 0"), std::string::npos);
  EXPECT_THROW(generate_qa({"v4", 50, {{10, 60, "late"}}}, 0), ContractViolation);
  EXPECT_THROW(generate_qa({"v4", 50, {{10, 10, "empty span"}}}, 0), ContractViolation);
}

TEST(GenerateQa, GroundingFormatAnswersParse) {
  const auto pairs = generate_qa({"v5", 90, {{0.04, 12.36, "a"}, {40, 88, "b"}}}, 1).pairs;
  for (const auto& qa : pairs) {
    const QAPair g = to_grounding_format(qa);
    const auto segs = parse_segments(g.answer);
    ASSERT_EQ(segs.size(), 1u);
    EXPECT_EQ(format_segments(segs), g.answer);
  }
  EXPECT_EQ(to_grounding_format(pairs[0]).answer, "There are 1 relevant segments: [[0.0, 12.4]]");
}

TEST(GenerateQa, FiveHundredPairsPassValidation) {
  Rng rng(8);
  std::size_t count = 0;
  for (std::size_t i = 0; count < 500; ++i) {
    const TimedAnnotation ann = random_annotation(rng, i);
    for (const auto& qa : generate_qa(ann, i).pairs) {
      const auto rep = validate_qa(qa, ann);
      EXPECT_TRUE(rep.ok()) << nlohmann::json(qa).dump() << " " << (rep.ok() ? "" : rep.failures[0]);
      const auto grep = validate_qa(to_grounding_format(qa), ann);
      EXPECT_TRUE(grep.ok()) << (grep.ok() ? "" : grep.failures[0]);
      ++count;
    }
  }
}

TEST(EnrichDialogue, WorkedExamples) {
  Dialogue d{"v1", {{"user", "What does she do?"}, {"assistant", "She sits down."}}, {std::nullopt, Segment{3.0, 7.5}}};
  const Dialogue e = enrich_dialogue(d, 0);
  EXPECT_EQ(e.turns[1].text, "She sits down. (from 3.0s to 7.5s)");
  EXPECT_EQ(e.turns[0].text, d.turns[0].text);
  EXPECT_EQ(e.turns.size(), d.turns.size());
  EXPECT_EQ(nlohmann::json(enrich_dialogue(e, 0)).dump(), nlohmann::json(e).dump());

  Dialogue plain{"v2", {{"user", "Hi"}, {"assistant", "Hello"}}, {std::nullopt, std::nullopt}};
  EXPECT_EQ(nlohmann::json(enrich_dialogue(plain, 0)).dump(), nlohmann::json(plain).dump());
}

TEST(EnrichDialogue, MisalignmentIsRejected) {
  Dialogue d{"v1", {{"user", "q"}, {"assistant", "a"}}, {std::nullopt}};
  EXPECT_THROW(enrich_dialogue(d, 0), ContractViolation);
  d.segments = {Segment{1, 2}, std::nullopt};
  EXPECT_THROW(enrich_dialogue(d, 0), ContractViolation);
  Dialogue wrong_roles{"v1", {{"assistant", "a"}, {"user", "q"}}, {std::nullopt, std::nullopt}};
  EXPECT_THROW(enrich_dialogue(wrong_roles, 0), ContractViolation);
}

TEST(ValidateQa, WorkedExamples) {
  const TimedAnnotation ann = door();
  QAPair qa = generate_qa(ann, 0).pairs[0];
  EXPECT_TRUE(validate_qa(qa, ann).ok());

  QAPair drift = qa;
  drift.answer = "The event \"person opens door\" takes place from 12.9s to 25.0s.";
  const auto r = validate_qa(drift, ann);
  ASSERT_FALSE(r.ok());
  EXPECT_NE(r.failures[0].find("endpoint fidelity"), std::string::npos);

  QAPair within = qa;
  within.answer = "The event takes place from 12.44s to 25.0s.";
  EXPECT_TRUE(validate_qa(within, ann).ok());

  TimedAnnotation short_ann = ann;
  short_ann.duration = 20.0;
  bool containment = false;
  for (const auto& f : validate_qa(qa, short_ann).failures) containment |= f.find("containment") == 0;
  EXPECT_TRUE(containment);

  QAPair broken = to_grounding_format(qa);
  broken.answer = "There are 2 relevant segments: [[12.4, 25.0]]";
  bool grammar = false;
  for (const auto& f : validate_qa(broken, ann).failures) grammar |= f.find("grammar") == 0;
  EXPECT_TRUE(grammar);
}

TEST(ExtractTimestamps, FindsSecondsValues) {
  EXPECT_EQ(extract_timestamps("from 12.4s to 25s, not 3 seconds or 4sx"), (std::vector<double>{12.4, 25}));
}

TEST(RewriteViaExternal, DefaultClientMatchesTemplates) {
  TemplateRewriter client;
  RewritePayload p;
  p.annotation = door();
  p.seed = 4;
  const RewriteResult r = rewrite_via_external(PromptKind::kQaGen, p, client);
  EXPECT_FALSE(r.used_fallback);
  EXPECT_EQ(r.text, generate_qa(door(), 4).pairs[0].answer);

  p.dialogue = {"v1", {{"user", "q"}, {"assistant", "She sits down."}}, {std::nullopt, Segment{3.0, 7.5}}};
  const RewriteResult d = rewrite_via_external(PromptKind::kDialogueEnrich, p, client);
  EXPECT_FALSE(d.used_fallback);
  EXPECT_EQ(d.text, nlohmann::json(enrich_dialogue(p.dialogue, 4)).dump());

  const RewriteResult ins = rewrite_via_external(PromptKind::kInstruction, p, client);
  EXPECT_EQ(ins.text, prompt_template(PromptKind::kInstruction));
  EXPECT_NE(build_prompt(PromptKind::kQaGen, p).find(prompt_template(PromptKind::kQaGen)), std::string::npos);
}

TEST(RewriteViaExternal, FailuresFallBackToTemplates) {
  RewritePayload p;
  p.annotation = door();
  const std::string expected = generate_qa(door(), 0).pairs[0].answer;

  FailingClient failing;
  const RewriteResult f = rewrite_via_external(PromptKind::kQaGen, p, failing);
  EXPECT_TRUE(f.used_fallback);
  EXPECT_EQ(f.text, expected);
  ASSERT_EQ(f.failures.size(), 1u);
  EXPECT_NE(f.failures[0].find("timeout"), std::string::npos);

  FixedClient mutated("Someone opens the door from 13.4s to 25.0s.");
  const RewriteResult m = rewrite_via_external(PromptKind::kQaGen, p, mutated);
  EXPECT_TRUE(m.used_fallback);
  EXPECT_EQ(m.text, expected);
  EXPECT_FALSE(m.failures.empty());

  FixedClient faithful("Someone opens the door from 12.4s to 25.0s.");
  const RewriteResult ok = rewrite_via_external(PromptKind::kQaGen, p, faithful);
  EXPECT_FALSE(ok.used_fallback);
  EXPECT_EQ(ok.text, "Someone opens the door from 12.4s to 25.0s.");

  p.dialogue = {"v1", {{"user", "q"}, {"assistant", "She sits down."}}, {std::nullopt, Segment{3.0, 7.5}}};
  FixedClient dropped(nlohmann::json(p.dialogue).dump());
  EXPECT_TRUE(rewrite_via_external(PromptKind::kDialogueEnrich, p, dropped).used_fallback);
  FixedClient garbage("not json");
  EXPECT_TRUE(rewrite_via_external(PromptKind::kDialogueEnrich, p, garbage).used_fallback);
}

TEST(Json, RoundTrips) {
  const TimedAnnotation a = door();
  EXPECT_EQ(nlohmann::json(nlohmann::json(a).get<TimedAnnotation>()).dump(), nlohmann::json(a).dump());
  Dialogue d{"v1", {{"user", "q"}, {"assistant", "a"}}, {std::nullopt, Segment{1, 2}}};
  EXPECT_EQ(nlohmann::json(nlohmann::json(d).get<Dialogue>()).dump(), nlohmann::json(d).dump());
}
