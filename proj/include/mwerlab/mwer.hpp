#pragma once

// Expected word errors over an N-best list under renormalised posteriors.
//
// Each hypothesis gets an unnormalised log score
//     s_n = log P(y_n|x) + lambda_t log P_ext(y_n) - lambda_s log P_ilm(y_n) [+ log_g]
// (weights zeroed per fusion mode, log_g added in ilme mode only), posteriors
// are softmax(s), and the loss is sum_n P_n R_n with R_n the word-level edit
// distance to the reference.
//
// Gradient: dL/ds_n = P_n (R_n - Rbar), and
//     ds_n/dθ = -dL_e2e(y_n)/dθ + lambda_s dL_ilm(y_n)/dθ
// where L_ilm never touches encoder parameters. The external LM is frozen.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "mwerlab/decoder.hpp"
#include "mwerlab/transducer.hpp"

namespace mwerlab {

/// Word-level Levenshtein distance with unit costs, after splitting on the separator.
inline std::size_t word_errors(const TokenSeq& hyp, const TokenSeq& ref, const Vocab& v) {
  const auto h = split_words(hyp, v);
  const auto r = split_words(ref, v);
  std::vector<std::size_t> prev(r.size() + 1), cur(r.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= h.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= r.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (h[i - 1] == r[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[r.size()];
}

struct NBestScoringContext {
  NBestList nbest;
  TokenSeq reference;
  FusionConfig config;
  double log_g = 0.0;
};

struct MwerResult {
  double loss = 0.0;
  std::vector<double> posteriors;
  std::vector<std::size_t> errors_per_hyp;
  double expected_errors = 0.0;
  GradMap grads;
};

/// Unnormalised log score of one hypothesis for posterior computation.
inline double posterior_log_score(const Hypothesis& h, const FusionConfig& cfg, double log_g) {
  const double s = fused_score(h.log_p_e2e, h.log_p_extlm, h.log_p_ilm, cfg);
  return cfg.mode == FusionMode::ilme ? s + log_g : s;
}

/// Softmax of the per-hypothesis log scores stored in the N-best list.
inline std::vector<double> renorm_posteriors(const NBestScoringContext& ctx) {
  if (ctx.nbest.hypotheses.empty()) throw ContractError("renorm_posteriors: empty N-best list");
  if (!std::isfinite(ctx.log_g)) throw ContractError("renorm_posteriors: log_g must be finite");
  std::vector<double> s;
  for (const Hypothesis& h : ctx.nbest.hypotheses) s.push_back(posterior_log_score(h, ctx.config, ctx.log_g));
  return softmax(s);
}

/// P_n (R_n - Rbar).
inline std::vector<double> mwer_coefficients(const std::vector<double>& posteriors,
                                             const std::vector<std::size_t>& errors) {
  double rbar = 0.0;
  for (std::size_t n = 0; n < posteriors.size(); ++n) rbar += posteriors[n] * static_cast<double>(errors[n]);
  std::vector<double> c(posteriors.size());
  for (std::size_t n = 0; n < c.size(); ++n) c[n] = posteriors[n] * (static_cast<double>(errors[n]) - rbar);
  return c;
}

namespace detail {

// Recomputes the model-dependent components at the current parameters, then
// evaluates the loss and (optionally) the analytic gradient.
inline MwerResult mwer_evaluate(const TransducerModel& m, const Array& features, const NBestScoringContext& ctx,
                                bool with_grad) {
  const auto& hyps = ctx.nbest.hypotheses;
  if (hyps.empty()) throw ContractError("mwer: empty N-best list");
  const FusionConfig& cfg = ctx.config;
  Weights w(m);
  const EncoderPass enc = encoder_forward(m, w, features);
  std::vector<PredictorPass> preds;
  std::vector<LatticePass> lats;
  std::vector<IlmPass> ilms;
  NBestScoringContext fresh = ctx;
  for (std::size_t n = 0; n < hyps.size(); ++n) {
    preds.push_back(predictor_forward(m, w, hyps[n].tokens));
    lats.push_back(lattice_forward(m, w, enc, preds.back(), hyps[n].tokens));
    ilms.push_back(ilm_forward(m, w, hyps[n].tokens));
    Hypothesis& h = fresh.nbest.hypotheses[n];
    h.log_p_e2e = lats.back().lattice.log_posterior;
    h.log_p_ilm = ilms.back().log_prob;
    h.fused_score = fused_score(h.log_p_e2e, h.log_p_extlm, h.log_p_ilm, cfg);
  }
  MwerResult r;
  r.posteriors = renorm_posteriors(fresh);
  for (const Hypothesis& h : hyps) r.errors_per_hyp.push_back(word_errors(h.tokens, ctx.reference, m.vocab()));
  for (std::size_t n = 0; n < hyps.size(); ++n)
    r.expected_errors += r.posteriors[n] * static_cast<double>(r.errors_per_hyp[n]);
  r.loss = r.expected_errors;
  if (!with_grad) return r;

  r.grads = GradMap::zeros_like(m.params);
  GradRefs g(m, r.grads);
  const std::vector<double> c = mwer_coefficients(r.posteriors, r.errors_per_hyp);
  const double lambda_s = cfg.effective_lambda_s();
  Array df = Array::matrix(enc.out.rows(), m.config.joint_dim);
  for (std::size_t n = 0; n < hyps.size(); ++n) {
    if (c[n] == 0.0) continue;
    // c_n * (-dL_e2e/dθ): lattice_backward adds scale * dL_e2e/dθ.
    lattice_backward(m, w, g, lats[n], preds[n], hyps[n].tokens, -c[n], df);
    if (lambda_s != 0.0) ilm_backward(m, w, g, ilms[n], hyps[n].tokens, c[n] * lambda_s);
  }
  encoder_backward(w, g, enc, df);
  return r;
}

}  // namespace detail

/// Loss, posteriors, word errors and the analytic gradient at the model's parameters.
inline MwerResult mwer_loss(const TransducerModel& m, const Array& features, const NBestScoringContext& ctx) {
  return detail::mwer_evaluate(m, features, ctx, true);
}

/// Loss value only (used by finite differences).
inline double mwer_loss_value(const TransducerModel& m, const Array& features, const NBestScoringContext& ctx) {
  return detail::mwer_evaluate(m, features, ctx, false).loss;
}

/// sum_n P_n (R_n - Rbar) * (-dL_e2e(y_n)/dθ + lambda_s dL_ilm(y_n)/d(θ \ θ_enc)).
inline GradMap mwer_grad_analytic(const NBestScoringContext& ctx, const TransducerModel& m, const Array& features) {
  return detail::mwer_evaluate(m, features, ctx, true).grads;
}

}  // namespace mwerlab
