#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mwerlab/corpus.hpp"
#include "mwerlab/evalkit.hpp"
#include "mwerlab/training.hpp"

using namespace mwerlab;

namespace {

const char* kToy = R"(# toy grammar
name=toy
noise_sigma=0.5
frames_per_token=1
seed=11
S -> GREET NAME : 2
S -> call NAME now
GREET -> hi
GREET -> hello
NAME -> ann
NAME -> bob : 3
)";

std::string data_dir() { return std::string(MWERLAB_SOURCE_DIR) + "/data/grammars/"; }

TokenEmbeddings emb8() { return TokenEmbeddings::make(Vocab::lowercase(), 8, 7); }

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / ("mwerlab_corpus_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Tokenize, Definitional) {
  const Vocab v = Vocab::lowercase();
  EXPECT_EQ(tokenize("ab", v).ids, (std::vector<TokenId>{v.id("a"), v.id("b")}));
  EXPECT_EQ(tokenize("a b", v).ids, (std::vector<TokenId>{v.id("a"), v.word_sep_id(), v.id("b")}));
}

TEST(Tokenize, RoundTripsGrammarSentences) {
  const Vocab v = Vocab::lowercase();
  std::mt19937_64 rng(3);
  for (const char* name : {"call", "search", "books"}) {
    const DomainSpec d = load_domain_spec(data_dir() + name + ".grammar");
    for (int i = 0; i < 1000 / 3 + 1; ++i) {
      const std::string s = sample_sentence(d.grammar, rng);
      ASSERT_FALSE(s.empty());
      EXPECT_EQ(detokenize(tokenize(s, v), v), s);
    }
  }
}

TEST(Grammar, ParsesHeaderAndWeights) {
  const DomainSpec d = parse_domain_spec(kToy);
  EXPECT_EQ(d.name, "toy");
  EXPECT_EQ(d.noise_sigma, 0.5);
  EXPECT_EQ(d.seed, 11u);
  ASSERT_EQ(d.grammar.rules.at("S").size(), 2u);
  EXPECT_EQ(d.grammar.rules.at("S")[0].weight, 2.0);
  EXPECT_EQ(d.grammar.rules.at("NAME")[1].weight, 3.0);
  EXPECT_EQ(std::set<std::string>(d.word_list.begin(), d.word_list.end()),
            (std::set<std::string>{"ann", "bob", "call", "hello", "hi", "now"}));
}

TEST(Grammar, SamplingFollowsWeights) {
  const DomainSpec d = parse_domain_spec(kToy);
  std::mt19937_64 rng(5);
  int bob = 0, call = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const std::string s = sample_sentence(d.grammar, rng);
    bob += s.find("bob") != std::string::npos;
    call += s.rfind("call", 0) == 0;
  }
  EXPECT_NEAR(bob / double(n), 0.75, 0.015);
  EXPECT_NEAR(call / double(n), 1.0 / 3.0, 0.015);
}

TEST(Grammar, Rejections) {
  EXPECT_THROW(parse_domain_spec("name=x\nS -> a : zz\n"), FormatError);
  EXPECT_THROW(parse_domain_spec("name=x\ns -> a\n"), FormatError);
  EXPECT_THROW(parse_domain_spec("name=x\ncolour=red\nS -> a\n"), FormatError);
  EXPECT_THROW(parse_domain_spec("name=x\nS -> A\n").validate(Vocab::lowercase()), ConfigError);
  EXPECT_THROW(parse_domain_spec("name=x\nS -> a9\n").validate(Vocab::lowercase()), ContractError);
}

TEST(Features, ZeroNoiseEqualsEmbeddings) {
  DomainSpec d = parse_domain_spec(kToy);
  d.noise_sigma = 0.0;
  const Vocab v = Vocab::lowercase();
  const auto emb = emb8();
  const TokenSeq y = tokenize("hi bob", v);
  const Array x = synthesize_features(y, d, emb, 4);
  ASSERT_EQ(x.rows(), y.size());
  for (std::size_t t = 0; t < y.size(); ++t)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(x.at(t, k), emb.table.at(static_cast<std::size_t>(y[t]), k));
}

TEST(Features, NearestEmbeddingRecoversTokensWithoutNoise) {
  DomainSpec d = load_domain_spec(data_dir() + "email.grammar");
  d.noise_sigma = 0.0;
  d.frames_per_token = 2;
  const Vocab v = Vocab::lowercase();
  const auto emb = emb8();
  const Corpus c = generate_domain(d, 30, SplitRatios{}, v, emb);
  for (const Utterance& u : c.utterances) {
    ASSERT_EQ(u.features.rows(), u.reference.size() * 2);
    TokenSeq rec;
    for (std::size_t t = 0; t < u.features.rows(); t += 2) {
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t k = 0; k < v.size(); ++k) {
        double dist = 0.0;
        for (std::size_t j = 0; j < 8; ++j) dist += std::pow(u.features.at(t, j) - emb.table.at(k, j), 2);
        if (dist < bd) bd = dist, best = k;
      }
      rec.ids.push_back(static_cast<TokenId>(best));
    }
    EXPECT_EQ(rec, u.reference) << u.id;
  }
}

TEST(Features, Deterministic) {
  const DomainSpec d = parse_domain_spec(kToy);
  const auto emb = emb8();
  const TokenSeq y = tokenize("call ann now", Vocab::lowercase());
  const Array a = synthesize_features(y, d, emb, 9), b = synthesize_features(y, d, emb, 9);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  const Array c = synthesize_features(y, d, emb, 10);
  EXPECT_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
}

TEST(Corpus, SingleUtteranceShape) {
  DomainSpec d = parse_domain_spec(kToy);
  d.frames_per_token = 3;
  const Corpus c = generate_domain(d, 1, SplitRatios{}, Vocab::lowercase(), emb8());
  ASSERT_EQ(c.utterances.size(), 1u);
  EXPECT_EQ(c.utterances[0].features.rows(), 3 * c.utterances[0].reference.size());
}

TEST(Corpus, SplitsAndIds) {
  const DomainSpec d = load_domain_spec(data_dir() + "meeting.grammar");
  const Corpus c = generate_domain(d, 50, SplitRatios{0.6, 0.2, 0.2}, Vocab::lowercase(), emb8());
  std::set<std::string> ids;
  std::map<std::string, int> n;
  for (const auto& u : c.utterances) {
    EXPECT_TRUE(ids.insert(u.id).second);
    ++n[u.split];
  }
  EXPECT_EQ(n["train"], 30);
  EXPECT_EQ(n["dev"], 10);
  EXPECT_EQ(n["test"], 10);
}

TEST(Corpus, ReproducibleAndSeedSensitive) {
  DomainSpec d = load_domain_spec(data_dir() + "search.grammar");
  const Vocab v = Vocab::lowercase();
  const Corpus a = generate_domain(d, 20, SplitRatios{}, v, emb8()), b = generate_domain(d, 20, SplitRatios{}, v, emb8());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].text, b.utterances[i].text);
    EXPECT_EQ(a.utterances[i].split, b.utterances[i].split);
    EXPECT_TRUE(std::equal(a.utterances[i].features.values().begin(), a.utterances[i].features.values().end(),
                           b.utterances[i].features.values().begin()));
  }
  d.seed += 1;
  const Corpus c = generate_domain(d, 20, SplitRatios{}, v, emb8());
  int same = 0;
  for (std::size_t i = 0; i < a.utterances.size(); ++i) same += a.utterances[i].text == c.utterances[i].text;
  EXPECT_LT(same, 20);
}

TEST(Corpus, SaveLoadRoundTrip) {
  const Vocab v = Vocab::lowercase();
  const Corpus c = generate_domain(parse_domain_spec(kToy), 12, SplitRatios{}, v, emb8());
  const std::string stem = (temp_dir() / "toy").string();
  save_corpus(stem, c.utterances, v);
  const auto back = load_corpus(stem, v);
  ASSERT_EQ(back.size(), c.utterances.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, c.utterances[i].id);
    EXPECT_EQ(back[i].split, c.utterances[i].split);
    EXPECT_EQ(back[i].reference, c.utterances[i].reference);
    EXPECT_TRUE(std::equal(back[i].features.values().begin(), back[i].features.values().end(),
                           c.utterances[i].features.values().begin()));
  }
  std::ofstream(stem + ".tsv", std::ios::app) << back[0].id << "\ttoy\ttest\thi\ttoy.feats\n";
  EXPECT_THROW(load_corpus(stem, v), FormatError);
}

// Domain shift between the shipped grammars, measured on generated text.
TEST(Corpus, ShippedDomainsAreShifted) {
  std::vector<std::string> source;
  for (const char* name : {"call", "meeting", "search", "keyboard", "email", "common"})
    for (const auto& s : sample_text(load_domain_spec(data_dir() + name + ".grammar"), 200, 0)) source.push_back(s);
  const auto target = sample_text(load_domain_spec(data_dir() + "books.grammar"), 200, 0);
  EXPECT_GE(unigram_kl(word_unigram(target), word_unigram(source)), 0.5);
  EXPECT_GT(unseen_word_ngrams(target, source, 2), 0u);
  const auto call = sample_text(load_domain_spec(data_dir() + "call.grammar"), 300, 0);
  const auto email = sample_text(load_domain_spec(data_dir() + "email.grammar"), 300, 0);
  EXPECT_GE(unigram_kl(word_unigram(email), word_unigram(call)), 0.5);
  EXPECT_GT(unseen_word_ngrams(email, call, 2), 0u);
}

TEST(Corpus, KlAndUnseenOracles) {
  EXPECT_NEAR(unigram_kl(word_unigram({"a b"}), word_unigram({"b a"})), 0.0, 1e-15);
  EXPECT_NEAR(unigram_kl({{"a", 0.75}, {"b", 0.25}}, {{"a", 0.5}, {"b", 0.5}}, 0.0),
              0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-12);
  EXPECT_GT(unigram_kl({{"a", 1.0}}, {{"b", 1.0}}), 0.0);
  EXPECT_EQ(unseen_word_ngrams({"x y z"}, {"x y"}, 2), 1u);
  EXPECT_EQ(unseen_word_ngrams({"x y"}, {"x y z"}, 2), 0u);
}

// A zero-noise source corpus is learnable by the model sizes used downstream.
TEST(Corpus, ZeroNoiseIsLearnable) {
  DomainSpec d = load_domain_spec(data_dir() + "call.grammar");
  d.noise_sigma = 0.0;
  const Vocab v = Vocab::lowercase();
  ModelConfig mc;
  mc.vocab = v;
  const Corpus c = generate_domain(d, 40, SplitRatios{1.0, 0.0, 0.0}, v, TokenEmbeddings::make(v, mc.feat_dim, 7));
  TrainConfig tc;
  tc.objective = Objective::e2e;
  tc.steps = 500;
  tc.optimizer.kind = OptimizerKind::adam;
  tc.optimizer.learning_rate = 0.01;
  const TransducerModel m = train(init_model(mc, 1), c.utterances, nullptr, tc);
  FusionConfig greedy;
  greedy.mode = FusionMode::none;
  const auto hyps = decode_top1(m, nullptr, c.utterances, greedy);
  EXPECT_LE(corpus_wer(hyps, c.utterances, v).wer, 5.0);
}
