#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mwerlab/config.hpp"
#include "mwerlab/evalkit.hpp"
#include "mwerlab/experiment.hpp"
#include "support.hpp"

using namespace mwerlab;

namespace {

Utterance ref(const std::string& id, const std::string& text, const std::string& domain = "d") {
  const Vocab v = Vocab::lowercase();
  Utterance u;
  u.id = id;
  u.text = text;
  u.reference = tokenize(text, v);
  u.domain = domain;
  return u;
}

std::string random_words(std::mt19937_64& rng, std::size_t max_words) {
  static const char* words[] = {"ab", "cd", "ef", "a", "b"};
  std::uniform_int_distribution<std::size_t> n(0, max_words), w(0, 4);
  std::string s;
  for (std::size_t i = 0, k = n(rng); i < k; ++i) s += (i ? " " : "") + std::string(words[w(rng)]);
  return s;
}

const char* kSmallManifest = R"(
name=small
grammar_dir=grammars
domains=call,email
ood_domain=books
train_per_domain=12
test_per_domain=4
ood_test=4
lm_sentences_per_domain=60
feat_dim=4
enc_hidden=6
joint_dim=6
pred_embed=4
pred_hidden=6
baseline_steps=5
mwer_steps=0
beam=3
nbest=3
sweep_lambda_t=0,0.5
sweep_lambda_s=0,0.1
seeds=1
)";

Manifest small_manifest() { return Manifest::from_text(kSmallManifest, std::string(MWERLAB_SOURCE_DIR) + "/data"); }

}  // namespace

TEST(CorpusWer, PerfectAndEmpty) {
  const Vocab v = Vocab::lowercase();
  const std::vector<Utterance> refs{ref("u1", "ab cd ef gh"), ref("u2", "a b c d e f")};
  std::map<std::string, TokenSeq> perfect{{"u1", refs[0].reference}, {"u2", refs[1].reference}};
  EXPECT_EQ(corpus_wer(perfect, refs, v).wer, 0.0);
  std::map<std::string, TokenSeq> empty{{"u1", {}}, {"u2", {}}};
  const auto r = corpus_wer(empty, refs, v);
  EXPECT_EQ(r.words, 10u);
  EXPECT_EQ(r.wer, 100.0);
  const auto missing = corpus_wer({}, refs, v);
  EXPECT_EQ(missing.wer, 100.0);
  EXPECT_EQ(missing.missing.size(), 2u);
}

TEST(CorpusWer, AgreesWithPerUtteranceSum) {
  const Vocab v = Vocab::lowercase();
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Utterance> refs;
    std::map<std::string, TokenSeq> hyps;
    std::size_t errs = 0, words = 0;
    for (int i = 0; i < 15; ++i) {
      std::string r = random_words(rng, 5);
      if (r.empty()) r = "ab";
      refs.push_back(ref("u" + std::to_string(i), r));
      hyps["u" + std::to_string(i)] = tokenize(random_words(rng, 5), v);
      errs += word_errors(hyps["u" + std::to_string(i)], refs.back().reference, v);
      words += word_count(refs.back().reference, v);
    }
    EXPECT_DOUBLE_EQ(corpus_wer(hyps, refs, v).wer, 100.0 * errs / words);
  }
}

TEST(WeightedAverage, Cases) {
  EXPECT_DOUBLE_EQ(weighted_average({{"a", 10, 4.0}, {"b", 10, 8.0}, {"c", 10, 9.0}}), 7.0);
  EXPECT_DOUBLE_EQ(weighted_average({{"a", 37, 12.5}}), 12.5);
  // shaped like a six-subset table, recomputed by hand
  const std::vector<SubsetRow> rows{{"call", 1200, 10.1}, {"meeting", 800, 15.3}, {"search", 300, 20.0},
                                    {"keyboard", 500, 5.5},  {"email", 700, 8.8},    {"common", 900, 12.0}};
  const double expect = (1200 * 10.1 + 800 * 15.3 + 300 * 20.0 + 500 * 5.5 + 700 * 8.8 + 900 * 12.0) / 4400.0;
  EXPECT_NEAR(weighted_average(rows), expect, 1e-12);
  EXPECT_THROW(weighted_average({}), ContractError);
  EXPECT_THROW(weighted_average({{"a", 0, 1.0}}), ContractError);
}

TEST(WeightedAverage, RelativeReduction) {
  EXPECT_DOUBLE_EQ(relative_reduction(10.0, 9.0), 10.0);
  EXPECT_DOUBLE_EQ(relative_reduction(8.0, 10.0), -25.0);
  EXPECT_EQ(relative_reduction(0.0, 0.0), 0.0);
}

TEST(Sweep, OriginReproducesNoFusionAndArgminNeverLoses) {
  std::mt19937_64 rng(62);
  const ModelConfig mc = [] {
    ModelConfig c;
    c.vocab = Vocab::lowercase();
    c.feat_dim = 4;
    c.enc_hidden = {6};
    c.joint_dim = 6;
    c.pred_embed = 4;
    c.pred_hidden = 6;
    return c;
  }();
  const TransducerModel m = init_model(mc, 5);
  std::vector<Utterance> utts;
  std::vector<TokenSeq> lm_text;
  for (int i = 0; i < 8; ++i) {
    Utterance u = ref("u" + std::to_string(i), i % 2 ? "ab ba" : "a b", i < 4 ? "x" : "y");
    u.features = mwerlab::testing::random_features(u.reference.size(), 4, rng);
    lm_text.push_back(u.reference);
    utts.push_back(u);
  }
  const NGramLM lm = train_ngram(lm_text, mc.vocab, 2, 0.1);
  FusionConfig base;
  base.beam = 3;
  base.nbest = 3;
  const auto origin = sweep_lm_weights(m, &lm, utts, {{0.0, 0.0}}, base);
  FusionConfig none = base;
  none.mode = FusionMode::none;
  const auto hyps = decode_top1(m, nullptr, utts, none);
  for (std::size_t i = 0; i < origin.subsets.size(); ++i) {
    std::vector<Utterance> sub;
    for (const auto& u : utts)
      if (u.domain == origin.subsets[i]) sub.push_back(u);
    EXPECT_EQ(origin.best_wer[i], corpus_wer(hyps, sub, mc.vocab).wer);
  }
  const auto full = sweep_lm_weights(m, &lm, utts, {{1.0, 0.2}, {0.0, 0.0}, {0.5, 0.0}, {0.5, 0.1}}, base);
  for (std::size_t i = 0; i < full.subsets.size(); ++i) {
    EXPECT_LE(full.best_wer[i], full.surface.at({0.0, 0.0})[i]);
    for (const auto& [g, w] : full.surface) {
      EXPECT_LE(full.best_wer[i], w[i]);
      if (w[i] == full.best_wer[i]) {
        EXPECT_FALSE(g < full.argmin[i]);  // ties go to the smallest point
      }
    }
  }
  EXPECT_LE(full.oracle_average(), full.transferred_average(0));
}

TEST(Table, TsvAndAlignedText) {
  Table t{"T", {"Subset", "WER"}, {{"call", "1.00"}, {"keyboard", "12.50"}}};
  std::ostringstream tsv, txt;
  t.write_tsv(tsv);
  t.write_text(txt);
  EXPECT_EQ(tsv.str(), "# T\nSubset\tWER\ncall\t1.00\nkeyboard\t12.50\n");
  EXPECT_EQ(txt.str(), "T\nSubset      WER\n---------------\ncall       1.00\nkeyboard  12.50\n");
  EXPECT_EQ(fmt(2.345, 1), "2.3");
}

TEST(Config, UnknownKeysAndTypedGetters) {
  KeyValues kv({{"alpha", "1"}, {"beta", "x"}, {"list", "1, 2,3"}});
  kv.merge_text("# c\nalpha = 4\n\n", "t");
  EXPECT_EQ(kv.integer("alpha"), 4);
  EXPECT_EQ(kv.real_list("list"), (std::vector<double>{1, 2, 3}));
  try {
    kv.merge_text("gamma=2\n", "t");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "gamma");
  }
  try {
    kv.real("beta");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "beta");
  }
  EXPECT_THROW(kv.merge_text("alpha\n", "t"), ConfigError);
  ::setenv("MWTEST_ALPHA", "9", 1);
  kv.merge_env("MWTEST_");
  ::unsetenv("MWTEST_ALPHA");
  EXPECT_EQ(kv.integer("alpha"), 9);
}

TEST(Experiment, ManifestRejectsUnknownKeysAndBadCounts) {
  EXPECT_THROW(Manifest::from_text("lambda=1\n"), ConfigError);
  Manifest m = small_manifest();
  m.kv.set("train_per_domain", "3,4,5");
  try {
    build_data(m, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train_per_domain");
  }
}

TEST(Experiment, ZeroMwerStepsGivesBaselineEverywhereAndDumpsAgree) {
  const Manifest man = small_manifest();
  const ExperimentResult r = run_experiment(man, 1);
  ASSERT_EQ(r.systems.size(), 4u);
  const ParamSet& base = r.models.at("baseline").params;
  for (const char* name : {"MWER", "MWER-SF", "MWER-ILME"}) {
    const ParamSet& p = r.models.at(name).params;
    for (const auto& [k, e] : base.entries())
      EXPECT_TRUE(std::equal(e.value.values().begin(), e.value.values().end(), p.value(k).values().begin())) << name;
  }
  EXPECT_EQ(r.system("MWER").average, r.system("T-T").average);
  // Report numbers are recomputable from the dumped N-best lists.
  const ExperimentData d = build_data(man, 1);
  const Vocab v = Vocab::lowercase();
  for (const auto& s : r.systems) {
    std::istringstream is(r.nbest_tsv.at(s.name));
    std::map<std::string, TokenSeq> top1;
    for (const auto& l : read_nbest(is, v)) top1[l.utterance_id] = l.hypotheses.front().tokens;
    std::vector<SubsetRow> rows;
    for (const auto& [name, us] : by_domain(d.test)) rows.push_back({name, corpus_wer(top1, us, v).words, corpus_wer(top1, us, v).wer});
    EXPECT_DOUBLE_EQ(weighted_average(rows), s.average) << s.name;
  }
  // byte-identical on a repeat
  EXPECT_EQ(run_experiment(man, 1).report.tsv(), r.report.tsv());
}
