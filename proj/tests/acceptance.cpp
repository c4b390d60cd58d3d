// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Benchmark outputs land in the working directory as acceptance_seed<N>.report.txt.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/decoder.hpp"
#include "mwerlab/experiment.hpp"
#include "mwerlab/gradcheck.hpp"
#include "mwerlab/mwer.hpp"
#include "mwerlab/transducer.hpp"

#ifndef MWERLAB_SOURCE_DIR
#define MWERLAB_SOURCE_DIR "."
#endif

using namespace mwerlab;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& measured) {
  std::printf("criterion %2d: %s  %s  [%s]\n", id, ok ? "PASS" : "FAIL", what.c_str(), measured.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string sci(double x) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", x);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1, 2 ----------------------------------------------------------------

void transducer_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = transducer_gradcheck(1001, 20);
  const double secs = seconds_since(t0);
  report(1, r.max_rel_fd < 1e-5 && secs < 60.0, "transducer gradient vs central differences, 20 instances",
         "max rel err " + sci(r.max_rel_fd) + ", " + sci(secs) + " s");
}

void mwer_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = mwer_gradcheck(1002, 20);
  const double secs = seconds_since(t0);
  report(2, r.max_rel_fd < 1e-4 && r.max_rel_tape < 1e-6 && secs < 120.0,
         "MWER gradient vs finite differences and vs reverse mode, 20 instances",
         "fd " + sci(r.max_rel_fd) + ", tape " + sci(r.max_rel_tape) + ", " + sci(secs) + " s");
}

// --- 3 -------------------------------------------------------------------

// Sum over every alignment path, following the joint outputs directly.
double enumerate_paths(const TransducerModel& m, const Array& f, const Array& g, const TokenSeq& y, std::size_t t,
                       std::size_t u) {
  const std::size_t T = f.rows(), U = y.size();
  const auto lp = joint(m, f.row(t), g.row(u));
  const TokenId blank = m.vocab().blank_id();
  double total = kNegInf;
  // blank
  if (t + 1 == T) {
    if (u == U) total = log_add(total, lp[blank]);
  } else {
    total = log_add(total, lp[blank] + enumerate_paths(m, f, g, y, t + 1, u));
  }
  if (u < U) total = log_add(total, lp[y.ids[u]] + enumerate_paths(m, f, g, y, t, u + 1));
  return total;
}

void all_sequences(const std::vector<TokenId>& labels, std::size_t U, std::vector<TokenSeq>& out) {
  std::vector<std::size_t> idx(U, 0);
  while (true) {
    TokenSeq y;
    for (std::size_t i : idx) y.ids.push_back(labels[i]);
    out.push_back(y);
    std::size_t k = 0;
    while (k < U && ++idx[k] == labels.size()) idx[k++] = 0;
    if (k == U) break;
  }
}

void lattice_oracle() {
  std::mt19937_64 rng(1003);
  double worst = 0.0;
  std::size_t cases = 0;
  for (const std::string letters : {"a", "ab"}) {  // |V| = 3, 4
    for (std::size_t T = 1; T <= 4; ++T) {
      const TransducerModel m = init_model(small_config(letters), rng());
      const Array x = random_matrix(T, 3, rng);
      const Array f = encode(m, x);
      for (std::size_t U = 0; U <= 3; ++U) {
        std::vector<TokenSeq> ys;
        all_sequences(m.vocab().labels(), U, ys);
        for (const TokenSeq& y : ys) {
          const Array g = predict(m, y);
          const double brute = enumerate_paths(m, f, g, y, 0, 0);
          worst = std::max(worst, std::abs(brute - seq_log_posterior(m, x, y)));
          ++cases;
        }
      }
    }
  }
  report(3, worst < 1e-8, "lattice log-posterior vs alignment enumeration, T<=4 U<=3 |V|<=4",
         std::to_string(cases) + " cases, max abs err " + sci(worst));
}

// --- 4, 5 ----------------------------------------------------------------

NGramLM small_lm(const Vocab& v, std::mt19937_64& rng) {
  std::vector<TokenSeq> corpus;
  std::uniform_int_distribution<std::size_t> len(0, 4);
  for (int i = 0; i < 6; ++i) corpus.push_back(random_label_seq(len(rng), v, rng));
  return train_ngram(corpus, v, 2, 0.2);
}

FusionConfig saturated(FusionMode mode, double lt, double ls) {
  FusionConfig c;
  c.mode = mode;
  c.lambda_t = lt;
  c.lambda_s = ls;
  c.beam = 400;
  c.nbest = 5;
  c.max_symbols_per_frame = 4;
  return c;
}

TransducerModel sharpened_model(const std::string& letters, std::uint64_t seed, double s) {
  TransducerModel m = init_model(small_config(letters), seed);
  std::vector<std::string> names;
  for (const auto& [name, e] : m.params.entries()) names.push_back(name);
  for (const auto& name : names)
    for (double& v : m.params.mutable_value(name).values()) v *= s;
  return m;
}

void decode_oracle() {
  std::mt19937_64 rng(1004);
  std::size_t agree = 0, total = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const TransducerModel m = sharpened_model("abc", rng(), 1.5);
    const NGramLM lm = small_lm(m.vocab(), rng);
    const Array x = random_matrix(1 + inst % 4, 3, rng);
    for (FusionMode mode : {FusionMode::none, FusionMode::shallow, FusionMode::ilme})
      for (double lt : {0.0, 0.25, 1.0})
        for (double ls : {0.0, 0.05, 0.2}) {
          const auto cfg = saturated(mode, lt, ls);
          const auto b = beam_search(m, &lm, x, cfg);
          const auto e = exhaustive_decode(m, &lm, x, cfg);
          ++total;
          if (b.hypotheses.front().tokens == e.hypotheses.front().tokens) ++agree;
        }
  }
  report(4, agree == total, "saturated beam top-1 vs exhaustive decode, 50 instances x modes x lambda grid",
         std::to_string(agree) + "/" + std::to_string(total) + " agree");
}

bool same_lists(const NBestList& a, const NBestList& b, double tol, double& worst) {
  if (a.hypotheses.size() != b.hypotheses.size()) return false;
  for (std::size_t n = 0; n < a.hypotheses.size(); ++n) {
    if (a.hypotheses[n].tokens != b.hypotheses[n].tokens) return false;
    worst = std::max(worst, std::abs(a.hypotheses[n].fused_score - b.hypotheses[n].fused_score));
  }
  return worst <= tol;
}

double grad_diff(const GradMap& a, const GradMap& b) {
  double d = 0.0;
  for (const auto& [name, arr] : a.entries())
    for (std::size_t i = 0; i < arr.size(); ++i) d = std::max(d, std::abs(arr[i] - b.at(name)[i]));
  return d;
}

void reduction_identities() {
  std::mt19937_64 rng(1005);
  bool ok = true;
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const TransducerModel m = sharpened_model("abc", rng(), 1.5);
    const NGramLM lm = small_lm(m.vocab(), rng);
    const Array x = random_matrix(2 + inst % 3, 3, rng);
    FusionConfig c;
    c.beam = 8;
    const double lt = 0.4;
    auto run = [&](FusionMode mode, double t, double s) {
      FusionConfig k = c;
      k.mode = mode;
      k.lambda_t = t;
      k.lambda_s = s;
      return beam_search(m, &lm, x, k);
    };
    ok &= same_lists(run(FusionMode::ilme, 0.0, 0.0), run(FusionMode::none, 0.0, 0.0), 1e-12, worst);
    ok &= same_lists(run(FusionMode::ilme, lt, 0.0), run(FusionMode::shallow, lt, 0.0), 1e-12, worst);

    MwerInstance in = random_mwer_instance(rng, FusionMode::ilme, 0.0, 0.0);
    const auto ilme00 = mwer_loss(in.model, in.x, in.ctx);
    in.ctx.config.mode = FusionMode::none;
    const auto none = mwer_loss(in.model, in.x, in.ctx);
    in.ctx.config = {};
    in.ctx.config.mode = FusionMode::ilme;
    in.ctx.config.lambda_t = lt;
    in.ctx.config.lambda_s = 0.0;
    const auto ilmet0 = mwer_loss(in.model, in.x, in.ctx);
    in.ctx.config.mode = FusionMode::shallow;
    const auto sf = mwer_loss(in.model, in.x, in.ctx);
    const double d = std::max({std::abs(ilme00.loss - none.loss), grad_diff(ilme00.grads, none.grads),
                               std::abs(ilmet0.loss - sf.loss), grad_diff(ilmet0.grads, sf.grads)});
    worst = std::max(worst, d);
    ok &= d <= 1e-12;
  }
  report(5, ok, "ilme(0,0)=none and ilme(lt,0)=shallow for decoding and loss", "max diff " + sci(worst));
}

// --- 6, 7, 8, 9 ----------------------------------------------------------

void log_g_invariance() {
  std::mt19937_64 rng(1006);
  std::uniform_real_distribution<double> g(-10.0, 10.0);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    MwerInstance in = random_mwer_instance(rng, FusionMode::ilme, 0.25, 0.05);
    const auto base = mwer_loss(in.model, in.x, in.ctx);
    for (double lg : {-10.0, 10.0, g(rng), g(rng)}) {
      in.ctx.log_g = lg;
      const auto r = mwer_loss(in.model, in.x, in.ctx);
      worst = std::max({worst, std::abs(r.loss - base.loss), grad_diff(r.grads, base.grads)});
    }
    in.ctx.log_g = 0.0;
  }
  report(6, worst <= 1e-10, "MWER-ILME loss and gradient invariant to log g in [-10, 10]", "max diff " + sci(worst));
}

void posterior_normalisation() {
  std::mt19937_64 rng(1007);
  std::normal_distribution<double> score(-20.0, 15.0);
  std::uniform_int_distribution<std::size_t> N(1, 8);
  std::uniform_real_distribution<double> lam(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    NBestScoringContext ctx;
    ctx.config.mode = static_cast<FusionMode>(i % 3);
    ctx.config.lambda_t = lam(rng);
    ctx.config.lambda_s = lam(rng) * 0.5;
    ctx.log_g = score(rng) / 5.0;
    const std::size_t n = N(rng);
    for (std::size_t k = 0; k < n; ++k) {
      Hypothesis h;
      h.log_p_e2e = score(rng);
      h.log_p_extlm = score(rng);
      h.log_p_ilm = score(rng);
      ctx.nbest.hypotheses.push_back(h);
    }
    const auto p = renorm_posteriors(ctx);
    worst = std::max(worst, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
  }
  report(7, worst <= 1e-10, "renormalised N-best posteriors sum to 1, 1000 lists, all modes", "max dev " + sci(worst));
}

// Edit distance by plain recursion with a memo table.
std::size_t edit_rec(const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j,
                     std::vector<int>& memo) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  int& slot = memo[i * 7 + j];
  if (slot >= 0) return static_cast<std::size_t>(slot);
  std::size_t best = edit_rec(a, i + 1, b, j + 1, memo) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, edit_rec(a, i + 1, b, j, memo) + 1);
  best = std::min(best, edit_rec(a, i, b, j + 1, memo) + 1);
  slot = static_cast<int>(best);
  return best;
}

TokenSeq words_to_seq(const std::vector<int>& w) {
  TokenSeq y;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) y.ids.push_back(1);
    y.ids.push_back(2 + w[i]);
  }
  return y;
}

// Every word list of length <= max_len over `k` words.
std::vector<std::vector<int>> all_lists(int k, std::size_t max_len) {
  std::vector<std::vector<int>> out{{}};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (int w = 0; w < k; ++w) {
        auto l = out[i];
        l.push_back(w);
        out.push_back(l);
      }
    begin = end;
  }
  return out;
}

void edit_distance_oracle() {
  const Vocab v = Vocab::characters("abcde");
  const auto lists = all_lists(5, 6);
  std::vector<TokenSeq> seqs;
  for (const auto& l : lists) seqs.push_back(words_to_seq(l));
  std::size_t pairs = 0, mismatches = 0;
  std::vector<int> memo(49);
  // All pairs whose second list is in canonical first-use order relative to the first:
  // word_errors only compares words for equality, so every other pair is a relabelling
  // of one of these. Pairs with both lengths <= 4 are also checked without the reduction.
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const auto& a = lists[i];
    int used = 0;
    for (int w : a) used = std::max(used, w + 1);
    bool canonical_a = true;
    for (std::size_t p = 0, next = 0; p < a.size(); ++p) {
      if (static_cast<std::size_t>(a[p]) > next) canonical_a = false;
      if (static_cast<std::size_t>(a[p]) == next) ++next;
    }
    for (std::size_t j = 0; j < lists.size(); ++j) {
      const auto& b = lists[j];
      const bool small = a.size() <= 4 && b.size() <= 4;
      if (!small) {
        if (!canonical_a) continue;
        int next = used;
        bool canonical_b = true;
        for (int w : b) {
          if (w > next) canonical_b = false;
          if (w == next) ++next;
        }
        if (!canonical_b) continue;
      }
      std::fill(memo.begin(), memo.end(), -1);
      if (word_errors(seqs[i], seqs[j], v) != edit_rec(a, 0, b, 0, memo)) ++mismatches;
      ++pairs;
    }
  }
  report(8, mismatches == 0, "word edit distance vs recursive oracle, all word lists of length <= 6 over 5 words",
         std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches");
}

void ilm_structure() {
  std::mt19937_64 rng(1009);
  bool ok = true;
  std::size_t checked = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const TransducerModel m = init_model(small_config("abc"), rng());
    const TokenSeq y = random_label_seq(inst % 5, m.vocab(), rng);
    const double base = ilm_log_prob(m, y);
    TransducerModel p = m;
    std::normal_distribution<double> n(0.0, 3.0);
    for (const auto& [name, e] : m.params.entries())
      if (e.role == Role::encoder)
        for (double& x : p.params.mutable_value(name).values()) x += n(rng);
    ok &= ilm_log_prob(p, y) == base;
    const auto g = ilm_loss(m, y).grads;
    for (const auto& [name, e] : m.params.entries())
      if (e.role == Role::encoder)
        for (std::size_t i = 0; i < e.value.size(); ++i, ++checked) ok &= g.at(name)[i] == 0.0;
  }
  report(9, ok, "ILM log-prob exactly invariant to encoder perturbation, encoder ILM gradient exactly zero",
         std::to_string(checked) + " encoder gradient entries checked");
}

// --- 10, 11, 12 ----------------------------------------------------------

void benchmark() {
  const std::string path = std::string(MWERLAB_SOURCE_DIR) + "/data/benchmark.manifest";
  const Manifest man = Manifest::load(path);
  const auto seeds = man.seeds();
  std::size_t order_ok = 0, band_ok = 0, identical = 0;
  std::ostringstream detail10, detail11;
  for (std::uint64_t seed : seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentResult r = run_experiment(man, seed);
    const double tt = r.system("T-T").average, mw = r.system("MWER").average, sf = r.system("MWER-SF").average,
                 il = r.system("MWER-ILME").average;
    const bool ordered = il <= sf && sf <= mw && mw <= tt && relative_reduction(mw, il) >= 2.0;
    order_ok += ordered;
    const double oracle = r.sweep_ilme.oracle_average();
    const bool band = il <= 1.05 * oracle;
    band_ok += band;
    detail10 << " seed " << seed << ": " << fmt(tt) << "/" << fmt(mw) << "/" << fmt(sf) << "/" << fmt(il)
             << (ordered ? " ok;" : " no;");
    detail11 << " seed " << seed << ": " << fmt(il) << " vs oracle " << fmt(oracle) << " ("
             << fmt(100.0 * (il - oracle) / oracle, 1) << "%)" << (band ? " ok;" : " no;");
    std::ofstream(std::string("acceptance_seed") + std::to_string(seed) + ".report.txt") << r.report.text();
    std::fprintf(stderr, "seed %llu: %.0f s\n", static_cast<unsigned long long>(seed), seconds_since(t0));

    const ExperimentResult again = run_experiment(man, seed);
    identical += again.report.text() == r.report.text() && again.report.tsv() == r.report.tsv() &&
                 again.nbest_tsv == r.nbest_tsv;
  }
  const std::size_t need = (2 * seeds.size() + 2) / 3;
  report(10, seeds.size() == 3 && order_ok >= need,
         "benchmark WER MWER-ILME <= MWER-SF <= MWER <= T-T and >= 2% over MWER, >= 2 of 3 seeds",
         "T-T/MWER/SF/ILME" + detail10.str());
  report(11, seeds.size() == 3 && band_ok >= need,
         "MWER-ILME preset within 5% of the oracle-tuned MWER + ILME decode, >= 2 of 3 seeds", detail11.str());
  report(12, identical == seeds.size(), "repeated benchmark runs give byte-identical reports",
         std::to_string(identical) + "/" + std::to_string(seeds.size()) + " seeds identical");
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::string(argv[1]) == "--quick";  // skip the benchmark
  try {
    transducer_gradients();
    mwer_gradients();
    lattice_oracle();
    decode_oracle();
    reduction_identities();
    log_g_invariance();
    posterior_normalisation();
    edit_distance_oracle();
    ilm_structure();
    if (!quick) benchmark();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
