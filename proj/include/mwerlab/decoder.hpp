#pragma once

// Frame-synchronous transducer beam search with log-linear LM fusion, and an
// exhaustive oracle decoder for small instances.
//
// Every hypothesis is ranked by
//     log P(y|x) + lambda_t log P_ext(y) - lambda_s log P_ilm(y)
// with lambda_t zeroed unless mode is shallow/ilme and lambda_s zeroed unless
// mode is ilme. During search the E2E term is the log-sum over the alignment
// paths kept in the beam; the returned components are recomputed exactly.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/extlm.hpp"
#include "mwerlab/transducer.hpp"

namespace mwerlab {

enum class FusionMode { none, shallow, ilme };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::shallow: return "shallow";
    case FusionMode::ilme: return "ilme";
  }
  return "none";
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "shallow") return FusionMode::shallow;
  if (s == "ilme") return FusionMode::ilme;
  throw ConfigError("unknown fusion mode '" + s + "' (expected none, shallow or ilme)");
}

struct FusionConfig {
  FusionMode mode = FusionMode::none;
  double lambda_t = 0.25;
  double lambda_s = 0.05;
  std::size_t beam = 5;
  std::size_t nbest = 5;
  std::size_t max_symbols_per_frame = 16;

  double effective_lambda_t() const { return mode == FusionMode::none ? 0.0 : lambda_t; }
  double effective_lambda_s() const { return mode == FusionMode::ilme ? lambda_s : 0.0; }

  void validate() const {
    if (!(lambda_t >= 0.0) || !(lambda_s >= 0.0)) throw ConfigError("LM weights must be >= 0");
    if (beam < 1 || nbest < 1 || max_symbols_per_frame < 1)
      throw ConfigError("beam, nbest and max_symbols_per_frame must be >= 1");
    if (nbest > beam) throw ConfigError("nbest must not exceed beam");
  }
};

/// The ranking score under `cfg`.
inline double fused_score(double log_p_e2e, double log_p_extlm, double log_p_ilm, const FusionConfig& cfg) {
  return log_p_e2e + cfg.effective_lambda_t() * log_p_extlm - cfg.effective_lambda_s() * log_p_ilm;
}

struct Hypothesis {
  TokenSeq tokens;
  double log_p_e2e = 0.0;
  double log_p_extlm = 0.0;
  double log_p_ilm = 0.0;
  double fused_score = 0.0;
};

struct NBestList {
  std::string utterance_id;
  std::vector<Hypothesis> hypotheses;  // best first
};

/// Descending score, then lexicographic token order.
inline bool ranks_before(double sa, const TokenSeq& a, double sb, const TokenSeq& b) {
  if (sa != sb) return sa > sb;
  return a < b;
}

namespace detail {

inline void check_lm(const TransducerModel& m, const NGramLM* lm, const FusionConfig& cfg) {
  if (lm == nullptr) {
    if (cfg.mode != FusionMode::none) throw ConfigError("fusion mode requires an external LM");
    return;
  }
  if (!(lm->vocab() == m.vocab())) throw ConfigError("external LM and model use different vocabularies");
}

/// Exact components for y given a precomputed encoder pass.
inline Hypothesis score_exact(const TransducerModel& m, const Weights& w, const EncoderPass& enc,
                              const NGramLM* lm, const TokenSeq& y, const FusionConfig& cfg) {
  Hypothesis h;
  h.tokens = y;
  auto pred = predictor_forward(m, w, y);
  h.log_p_e2e = lattice_forward(m, w, enc, pred, y).lattice.log_posterior;
  h.log_p_extlm = lm ? lm_log_prob(*lm, y) : 0.0;
  h.log_p_ilm = ilm_forward(m, w, y).log_prob;
  h.fused_score = fused_score(h.log_p_e2e, h.log_p_extlm, h.log_p_ilm, cfg);
  return h;
}

inline void sort_hypotheses(std::vector<Hypothesis>& hs) {
  std::sort(hs.begin(), hs.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return ranks_before(a.fused_score, a.tokens, b.fused_score, b.tokens);
  });
}

struct SearchHyp {
  TokenSeq tokens;
  double e2e = 0.0;  // log-sum over kept alignment paths
  double lm = 0.0;   // prefix log-prob, no EOS
  double ilm = 0.0;  // prefix log-prob, no EOS
  std::vector<double> state;
  std::vector<double> g;
  std::vector<double> ilm_step;  // filled on demand

  double score(const FusionConfig& c) const { return fused_score(e2e, lm, ilm, c); }
};

struct Candidate {
  const SearchHyp* parent;
  TokenId token;
  double e2e, lm, ilm;
  TokenSeq tokens;
};

inline void ensure_ilm_step(const Weights& w, std::size_t J, std::size_t V, SearchHyp& h) {
  if (!h.ilm_step.empty()) return;
  std::vector<double> z(J);
  h.ilm_step.assign(V, 0.0);
  joint_forward(w, {}, h.g, z, h.ilm_step);
}

}  // namespace detail

/// Exact components of an arbitrary label sequence under `cfg`.
inline Hypothesis score_hypothesis(const TransducerModel& m, const NGramLM* lm, const Array& features,
                                   const TokenSeq& y, const FusionConfig& cfg) {
  detail::check_lm(m, lm, cfg);
  detail::Weights w(m);
  auto enc = detail::encoder_forward(m, w, features);
  return detail::score_exact(m, w, enc, lm, y, cfg);
}

inline NBestList beam_search(const TransducerModel& m, const NGramLM* lm, const Array& features,
                             const FusionConfig& cfg, const std::string& utterance_id = "") {
  cfg.validate();
  detail::check_lm(m, lm, cfg);
  using detail::SearchHyp;
  detail::Weights w(m);
  const auto enc = detail::encoder_forward(m, w, features);
  const std::size_t T = enc.out.rows(), J = m.config.joint_dim, V = m.vocab().size();
  const std::size_t S = m.config.pred_hidden;
  const auto blank = static_cast<std::size_t>(m.vocab().blank_id());
  const std::vector<TokenId> labels = m.vocab().labels();

  auto make_hyp = [&](const SearchHyp* parent, TokenId tok, TokenSeq tokens, double e2e, double lmv,
                      double ilmv) {
    SearchHyp h;
    h.tokens = std::move(tokens);
    h.e2e = e2e;
    h.lm = lmv;
    h.ilm = ilmv;
    h.state.assign(S, 0.0);
    detail::rnn_step(w, parent ? std::span<const double>(parent->state) : std::span<const double>{}, tok, h.state);
    h.g.assign(J, 0.0);
    matvec(*w.pred_pw, h.state, {}, h.g);
    return h;
  };

  auto prune = [&cfg](std::vector<SearchHyp> hs) {
    std::sort(hs.begin(), hs.end(), [&cfg](const SearchHyp& a, const SearchHyp& b) {
      return ranks_before(a.score(cfg), a.tokens, b.score(cfg), b.tokens);
    });
    if (hs.size() > cfg.beam) hs.resize(cfg.beam);
    return hs;
  };

  std::vector<SearchHyp> beam;
  beam.push_back(make_hyp(nullptr, m.vocab().blank_id(), TokenSeq{}, 0.0, 0.0, 0.0));

  std::vector<double> z(J), lp(V);
  for (std::size_t t = 0; t < T; ++t) {
    std::map<TokenSeq, SearchHyp> ended;  // emitted blank at frame t
    std::vector<SearchHyp> current = std::move(beam);
    for (std::size_t s = 0; s <= cfg.max_symbols_per_frame && !current.empty(); ++s) {
      std::map<TokenSeq, detail::Candidate> expansions;
      for (SearchHyp& h : current) {
        detail::joint_forward(w, enc.out.row(t), h.g, z, lp);
        const double blank_score = h.e2e + lp[blank];
        if (auto it = ended.find(h.tokens); it != ended.end()) {
          it->second.e2e = log_add(it->second.e2e, blank_score);
        } else {
          SearchHyp copy = h;
          copy.e2e = blank_score;
          ended.emplace(h.tokens, std::move(copy));
        }
        if (s == cfg.max_symbols_per_frame || h.tokens.size() >= T) continue;
        const std::vector<double>* lm_dist = lm ? &lm->step(h.tokens) : nullptr;
        detail::ensure_ilm_step(w, J, V, h);
        for (TokenId k : labels) {
          const auto ki = static_cast<std::size_t>(k);
          TokenSeq y = h.tokens;
          y.ids.push_back(k);
          const double e2e = h.e2e + lp[ki];
          if (auto it = expansions.find(y); it != expansions.end()) {
            it->second.e2e = log_add(it->second.e2e, e2e);
          } else {
            const double lmv = h.lm + (lm_dist ? (*lm_dist)[ki] : 0.0);
            const double ilmv = h.ilm + h.ilm_step[ki];
            expansions.emplace(y, detail::Candidate{&h, k, e2e, lmv, ilmv, y});
          }
        }
      }
      // Rank candidates before paying for their predictor state.
      std::vector<const detail::Candidate*> ranked;
      for (const auto& [_, c] : expansions) ranked.push_back(&c);
      std::sort(ranked.begin(), ranked.end(), [&cfg](const detail::Candidate* a, const detail::Candidate* b) {
        return ranks_before(fused_score(a->e2e, a->lm, a->ilm, cfg), a->tokens,
                            fused_score(b->e2e, b->lm, b->ilm, cfg), b->tokens);
      });
      if (ranked.size() > cfg.beam) ranked.resize(cfg.beam);
      // Drop candidates already below the beam-th hypothesis that ended this frame.
      if (ended.size() >= cfg.beam) {
        std::vector<double> done;
        for (const auto& [_, e] : ended) done.push_back(e.score(cfg));
        std::nth_element(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(cfg.beam - 1), done.end(),
                         std::greater<>());
        const double floor = done[cfg.beam - 1];
        std::erase_if(ranked, [&](const detail::Candidate* c) { return fused_score(c->e2e, c->lm, c->ilm, cfg) < floor; });
      }
      std::vector<SearchHyp> next;
      for (const detail::Candidate* c : ranked)
        next.push_back(make_hyp(c->parent, c->token, c->tokens, c->e2e, c->lm, c->ilm));
      current = std::move(next);
    }
    std::vector<SearchHyp> pool;
    for (auto& [_, h] : ended) pool.push_back(std::move(h));
    if (pool.empty()) throw std::logic_error("beam_search: empty beam");
    beam = prune(std::move(pool));
  }

  // Close every hypothesis with the end-of-sequence terms.
  const auto eos = static_cast<std::size_t>(m.vocab().blank_id());
  std::vector<std::pair<double, SearchHyp*>> finals;
  for (SearchHyp& h : beam) {
    detail::ensure_ilm_step(w, J, V, h);
    const double lmv = h.lm + (lm ? lm->step(h.tokens)[eos] : 0.0);
    const double ilmv = h.ilm + h.ilm_step[eos];
    finals.emplace_back(fused_score(h.e2e, lmv, ilmv, cfg), &h);
  }
  std::sort(finals.begin(), finals.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.first, a.second->tokens, b.first, b.second->tokens);
  });
  if (finals.size() > cfg.nbest) finals.resize(cfg.nbest);

  NBestList out;
  out.utterance_id = utterance_id;
  for (const auto& [_, h] : finals) out.hypotheses.push_back(detail::score_exact(m, w, enc, lm, h->tokens, cfg));
  detail::sort_hypotheses(out.hypotheses);
  return out;
}

/// Scores every blank-free sequence with U <= T exactly and keeps the top nbest.
inline NBestList exhaustive_decode(const TransducerModel& m, const NGramLM* lm, const Array& features,
                                   const FusionConfig& cfg, const std::string& utterance_id = "") {
  cfg.validate();
  detail::check_lm(m, lm, cfg);
  const std::size_t T = features.rows();
  if (m.vocab().size() > 5 || T > 4) throw ConfigError("instance too large for oracle");
  detail::Weights w(m);
  const auto enc = detail::encoder_forward(m, w, features);
  const std::vector<TokenId> labels = m.vocab().labels();
  std::vector<Hypothesis> all;
  std::vector<TokenSeq> frontier{TokenSeq{}};
  for (std::size_t len = 0; len <= T; ++len) {
    std::vector<TokenSeq> next;
    for (const TokenSeq& y : frontier) {
      all.push_back(detail::score_exact(m, w, enc, lm, y, cfg));
      if (len < T)
        for (TokenId k : labels) {
          TokenSeq z = y;
          z.ids.push_back(k);
          next.push_back(std::move(z));
        }
    }
    frontier = std::move(next);
  }
  detail::sort_hypotheses(all);
  if (all.size() > cfg.nbest) all.resize(cfg.nbest);
  return NBestList{utterance_id, std::move(all)};
}

// ---------------------------------------------------------------------------
// N-best TSV: utterance_id, rank, text, log_p_e2e, log_p_extlm, log_p_ilm, fused_score
// ---------------------------------------------------------------------------

inline const char* kNBestHeader = "utterance_id\trank\ttext\tlog_p_e2e\tlog_p_extlm\tlog_p_ilm\tfused_score";

inline void write_nbest(std::ostream& os, const std::vector<NBestList>& lists, const Vocab& v,
                        bool header = true) {
  if (header) os << kNBestHeader << "\n";
  char buf[256];
  for (const NBestList& l : lists)
    for (std::size_t r = 0; r < l.hypotheses.size(); ++r) {
      const Hypothesis& h = l.hypotheses[r];
      std::snprintf(buf, sizeof buf, "%.17g\t%.17g\t%.17g\t%.17g", h.log_p_e2e, h.log_p_extlm, h.log_p_ilm,
                    h.fused_score);
      os << l.utterance_id << "\t" << (r + 1) << "\t" << detokenize(h.tokens, v) << "\t" << buf << "\n";
    }
}

inline std::vector<NBestList> read_nbest(std::istream& is, const Vocab& v) {
  std::vector<NBestList> out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (first && line == kNBestHeader) {
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    std::string part;
    while (std::getline(ss, part, '\t')) f.push_back(part);
    if (f.size() != 7) throw FormatError("nbest: expected 7 columns in '" + line + "'");
    Hypothesis h;
    h.tokens = tokenize(f[2], v);
    h.log_p_e2e = std::stod(f[3]);
    h.log_p_extlm = std::stod(f[4]);
    h.log_p_ilm = std::stod(f[5]);
    h.fused_score = std::stod(f[6]);
    if (out.empty() || out.back().utterance_id != f[0]) out.push_back(NBestList{f[0], {}});
    out.back().hypotheses.push_back(std::move(h));
  }
  return out;
}

}  // namespace mwerlab
