#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "annot/corpus_store.hpp"
#include "annot/error.hpp"
#include "test_util.hpp"

namespace annot {
namespace {

using nlohmann::json;
using testing::make_dataset;
using testing::synthetic_records;

const LabelScheme kScheme = LabelScheme::consider_default();

std::string jsonl_of(const std::vector<SentenceRecord>& records) {
  std::ostringstream out;
  write_jsonl(out, records, kScheme);
  return out.str();
}

TEST(CorpusStore, ImportCountsFiveHundredPreclassifiedLines) {
  const auto records = synthetic_records(500, 230, 1);
  std::istringstream in(jsonl_of(records));
  Dataset ds;
  const auto s = import_jsonl(in, kScheme, ds);
  EXPECT_EQ(s.imported, 500u);
  EXPECT_TRUE(s.rejects.empty());
  EXPECT_EQ(s.positive, 230u);
  EXPECT_EQ(s.negative, 270u);
  EXPECT_EQ(ds.size(), 500u);
}

TEST(CorpusStore, EmptyFileImportsNothing) {
  std::istringstream in("");
  Dataset ds;
  const auto s = import_jsonl(in, kScheme, ds);
  EXPECT_EQ(s.imported, 0u);
  EXPECT_TRUE(s.rejects.empty());
}

TEST(CorpusStore, DuplicateIdRejectedWithLineNumber) {
  auto records = synthetic_records(10, 5, 2);
  records[6].id = records[2].id;
  std::istringstream in(jsonl_of(records));
  Dataset ds;
  const auto s = import_jsonl(in, kScheme, ds);
  EXPECT_EQ(s.imported, 9u);
  ASSERT_EQ(s.rejects.size(), 1u);
  EXPECT_EQ(s.rejects[0].line, 7u);
  EXPECT_NE(s.rejects[0].reason.find("duplicate"), std::string::npos);
}

TEST(CorpusStore, MalformedLinesAreReportedAndImportContinues) {
  std::istringstream in(
      "{\"id\":\"a\",\"text\":\"I consider it done.\"}\n"
      "not json\n"
      "{\"id\":\"b\",\"text\":\"no keyword here\"}\n"
      "{\"id\":\"c\",\"text\":\"They considered it.\",\"gold_label\":\"MAYBE\"}\n"
      "{\"id\":\"d\",\"text\":\"They considered it.\",\"gold_label\":\"non_evaluative\"}\n");
  Dataset ds;
  const auto s = import_jsonl(in, kScheme, ds);
  EXPECT_EQ(s.imported, 2u);
  ASSERT_EQ(s.rejects.size(), 3u);
  EXPECT_EQ(s.rejects[0].line, 2u);
  EXPECT_EQ(s.rejects[1].line, 3u);
  EXPECT_EQ(s.rejects[2].id, "c");
  EXPECT_EQ(ds.at("d").gold_label, Label::kNegative);
}

TEST(CorpusStore, ReimportIsIdempotent) {
  const auto text = jsonl_of(synthetic_records(20, 10, 3));
  Dataset ds;
  std::istringstream a(text), b(text);
  import_jsonl(a, kScheme, ds);
  const auto second = import_jsonl(b, kScheme, ds);
  EXPECT_EQ(ds.size(), 20u);
  EXPECT_EQ(second.imported, 0u);
}

TEST(CorpusStore, KeywordSpanUsesCodePoints) {
  const std::string text = "Der Künstler « considered a génie » left.";
  auto j = json{{"id", "u1"}, {"text", text}};
  const auto r = record_from_json(j, kScheme);
  EXPECT_EQ(r.keyword(), "considered");
  EXPECT_EQ(r.keyword_span.start, 15u);
  EXPECT_EQ(r.keyword_span.end, 25u);
  const auto back = record_from_json(record_to_json(r, kScheme), kScheme);
  EXPECT_EQ(back.keyword_span, r.keyword_span);
}

TEST(CorpusStore, RecordInvariantsAreEnforced) {
  json base = {{"id", "x"}, {"text", "We consider it fine."}, {"keyword_start", 3}, {"keyword_end", 11}};
  EXPECT_NO_THROW(record_from_json(base, kScheme));

  auto off = base;
  off["keyword_end"] = 99;
  EXPECT_THROW(record_from_json(off, kScheme), Error);

  auto wrong_word = base;
  wrong_word["keyword_start"] = 0;
  wrong_word["keyword_end"] = 2;
  EXPECT_THROW(record_from_json(wrong_word, kScheme), Error);

  auto neg_variant = base;
  neg_variant["gold_label"] = "NON_EVALUATIVE";
  neg_variant["variant"] = "AS";
  EXPECT_THROW(record_from_json(neg_variant, kScheme), Error);
  neg_variant["variant"] = "INDETERMINATE";
  EXPECT_NO_THROW(record_from_json(neg_variant, kScheme));

  auto half = base;
  half.erase("keyword_end");
  EXPECT_THROW(record_from_json(half, kScheme), Error);
}

TEST(CorpusStore, JsonlRoundTripKeepsEveryField) {
  auto r = testing::make_record("r1", "She is considered a genius.", Label::kPositive, "NOW:doc42");
  r.variant = VariantTag::kBare;
  r.voice = VoiceTag::kPassive;
  r.notes = "passive";
  const auto j = record_to_json(r, kScheme);
  EXPECT_EQ(j["gold_label"], "EVALUATIVE");
  EXPECT_EQ(j["variant"], "BARE");
  EXPECT_EQ(j["voice"], "PASSIVE");
  const auto back = record_from_json(j, kScheme);
  EXPECT_EQ(back.text, r.text);
  EXPECT_EQ(back.source, r.source);
  EXPECT_EQ(back.variant, r.variant);
  EXPECT_EQ(back.voice, r.voice);
  EXPECT_EQ(back.notes, r.notes);
}

TEST(CorpusStore, FullSizedSplitHasExactSizes) {
  const auto ds = make_dataset(synthetic_records(950, 450, 4));
  const SplitSpec spec{500, 100, {100, 101}, 102};
  const auto plan = make_split_plan(ds, spec, 7);
  EXPECT_EQ(plan.pretraining_ids.size(), 500u);
  EXPECT_EQ(plan.supervised_ids.size(), 100u);
  ASSERT_EQ(plan.validation_round_ids.size(), 2u);
  EXPECT_EQ(plan.validation_round_ids[0].size(), 100u);
  EXPECT_EQ(plan.validation_round_ids[1].size(), 101u);
  EXPECT_EQ(plan.evaluation_ids.size(), 102u);
  EXPECT_NO_THROW(plan.validate(ds));
}

TEST(CorpusStore, SplitErrors) {
  const auto ds = make_dataset(synthetic_records(50, 20, 5));
  EXPECT_THROW(make_split_plan(ds, SplitSpec{40, 10, {}, 1}, 1), Error);
  EXPECT_THROW(make_split_plan(ds, SplitSpec{10, 10, {}, 0}, 1), Error);
  EXPECT_THROW(make_split_plan(ds, SplitSpec{10, 10, {0}, 5}, 1), Error);
}

TEST(CorpusStore, SplitIsDeterministicAndIgnoresStorageOrder) {
  auto records = synthetic_records(200, 90, 6);
  const auto a = make_split_plan(make_dataset(records), SplitSpec{50, 30, {20, 20}, 30}, 99);
  std::reverse(records.begin(), records.end());
  const auto b = make_split_plan(make_dataset(records), SplitSpec{50, 30, {20, 20}, 30}, 99);
  EXPECT_EQ(a.to_json(), b.to_json());
  const auto c = make_split_plan(make_dataset(records), SplitSpec{50, 30, {20, 20}, 30}, 100);
  EXPECT_NE(a.to_json(), c.to_json());
}

TEST(CorpusStore, UnlabeledRecordsNeverEnterSplits) {
  auto records = synthetic_records(60, 30, 7);
  for (std::size_t i = 0; i < 10; ++i) records[i].gold_label.reset();
  const auto ds = make_dataset(records);
  const auto plan = make_split_plan(ds, SplitSpec{20, 10, {10}, 10}, 3);
  for (const auto& id : plan.all_ids()) EXPECT_TRUE(ds.at(id).gold_label.has_value());
  EXPECT_THROW(make_split_plan(ds, SplitSpec{20, 10, {10}, 11}, 3), Error);
}

// Property: pairwise disjointness by exhaustive intersection over random specs.
TEST(CorpusStore, SplitsArePairwiseDisjointProperty) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng() % 200;
    const auto ds = make_dataset(synthetic_records(n, n / 3, rng()));
    SplitSpec spec;
    std::size_t budget = n;
    auto take = [&](std::size_t lo) {
      const std::size_t v = budget <= lo ? budget : lo + rng() % (budget - lo + 1) / 3;
      budget -= v;
      return v;
    };
    spec.evaluation = take(1);
    spec.pretraining = take(0);
    spec.supervised = take(0);
    const std::size_t rounds = rng() % 4;
    for (std::size_t r = 0; r < rounds && budget > 0; ++r) spec.validation.push_back(take(1));
    const auto plan = make_split_plan(ds, spec, rng());
    std::vector<std::vector<std::string>> parts{plan.pretraining_ids, plan.supervised_ids, plan.evaluation_ids};
    for (const auto& v : plan.validation_round_ids) parts.push_back(v);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      for (std::size_t j = i + 1; j < parts.size(); ++j) {
        for (const auto& a : parts[i]) {
          for (const auto& b : parts[j]) ASSERT_NE(a, b);
        }
      }
    }
    EXPECT_EQ(plan.all_ids().size(), spec.total());
    EXPECT_NO_THROW(plan.validate(ds));
  }
}

TEST(CorpusStore, PlanValidationRejectsOverlapAndUnknownIds) {
  const auto ds = make_dataset(synthetic_records(30, 10, 8));
  auto plan = make_split_plan(ds, SplitSpec{10, 5, {5}, 5}, 1);
  auto overlap = plan;
  overlap.evaluation_ids.push_back(plan.pretraining_ids[0]);
  EXPECT_THROW(overlap.validate(ds), Error);
  auto unknown = plan;
  unknown.supervised_ids.push_back("nope");
  EXPECT_THROW(unknown.validate(ds), Error);
  auto empty_eval = plan;
  empty_eval.evaluation_ids.clear();
  EXPECT_THROW(empty_eval.validate(ds), Error);
  EXPECT_EQ(SplitPlan::from_json(plan.to_json()).to_json(), plan.to_json());
}

// Oracle: brute-force set difference over the plan union.
TEST(CorpusStore, UnseenPoolMatchesSetDifference) {
  const auto ds = make_dataset(synthetic_records(120, 50, 9));
  const auto plan = make_split_plan(ds, SplitSpec{40, 20, {20, 20}, 20}, 5);
  const auto all = plan.all_ids();
  EXPECT_EQ(unseen_pool(plan, {}), std::set<std::string>(all.begin(), all.end()));
  EXPECT_TRUE(unseen_pool(plan, std::set<std::string>(all.begin(), all.end())).empty());

  std::set<std::string> consumed(plan.pretraining_ids.begin(), plan.pretraining_ids.end());
  consumed.insert(plan.supervised_ids.begin(), plan.supervised_ids.end());
  std::set<std::string> expected;
  for (const auto& v : plan.validation_round_ids) expected.insert(v.begin(), v.end());
  expected.insert(plan.evaluation_ids.begin(), plan.evaluation_ids.end());
  EXPECT_EQ(unseen_pool(plan, consumed), expected);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::set<std::string> c;
    for (const auto& id : all) {
      if (rng() % 2) c.insert(id);
    }
    std::set<std::string> oracle;
    for (const auto& id : all) {
      bool seen = false;
      for (const auto& x : c) seen = seen || x == id;
      if (!seen) oracle.insert(id);
    }
    EXPECT_EQ(unseen_pool(plan, c), oracle);
  }
}

TEST(CorpusStore, ProjectDirStoresRecordsAndScheme) {
  testing::TempDir tmp;
  ProjectDir dir(tmp / "p");
  auto scheme = kScheme;
  scheme.positive_definition = "custom";
  dir.save_scheme(scheme);
  const auto records = synthetic_records(15, 5, 10);
  dir.append_records(records, scheme);
  EXPECT_EQ(dir.load_scheme().positive_definition, "custom");
  EXPECT_EQ(dir.load_records(scheme).size(), 15u);
}

TEST(CorpusStore, ProjectLockIsExclusive) {
  testing::TempDir tmp;
  ProjectDir dir(tmp / "p");
  {
    ProjectLock a(dir);
    try {
      ProjectLock b(dir);
      FAIL() << "second lock acquired";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConflict);
    }
  }
  EXPECT_NO_THROW(ProjectLock c(dir));
}

TEST(CorpusStore, CustomSchemeDrivesLabelNames) {
  LabelScheme s;
  s.positive_name = "YES";
  s.negative_name = "NO";
  s.lemma_forms = {"regard", "regards", "regarded"};
  const auto r = record_from_json(json{{"id", "a"}, {"text", "They regard it as art."}, {"gold_label", "yes"}}, s);
  EXPECT_EQ(r.gold_label, Label::kPositive);
  EXPECT_EQ(record_to_json(r, s)["gold_label"], "YES");
  EXPECT_EQ(LabelScheme::from_json(s.to_json()).negative_name, "NO");
}

}  // namespace
}  // namespace annot
