#pragma once

// The MWER family composed end to end on the autodiff tape: lattice forward
// recursion, internal LM, posterior softmax and the expected-error sum. Used to
// check the analytic gradient in mwer.hpp.

#include <vector>

#include "mwerlab/autodiff.hpp"
#include "mwerlab/mwer.hpp"
#include "mwerlab/transducer_graph.hpp"

namespace mwerlab::graph {

inline ad::Var mwer_loss(ad::Tape& tape, const ad::Inputs& in, const ModelConfig& cfg, const Array& features,
                         const NBestScoringContext& ctx) {
  const FusionConfig& fc = ctx.config;
  std::vector<ad::Var> scores;
  std::vector<double> errors;
  for (const Hypothesis& h : ctx.nbest.hypotheses) {
    ad::Var s = log_posterior(tape, in, cfg, features, h.tokens);
    s = ad::add_constant(s, fc.effective_lambda_t() * h.log_p_extlm);
    if (fc.effective_lambda_s() != 0.0) s = ad::sub(s, ad::scale(ilm_log_prob(in, cfg, h.tokens), fc.effective_lambda_s()));
    if (fc.mode == FusionMode::ilme) s = ad::add_constant(s, ctx.log_g);
    scores.push_back(s);
    errors.push_back(static_cast<double>(word_errors(h.tokens, ctx.reference, cfg.vocab)));
  }
  ad::Var post = ad::softmax(ad::stack(scores));
  return ad::dot(post, ad::constant(tape, Array::vector(errors)));
}

}  // namespace mwerlab::graph

namespace mwerlab {

/// Loss and gradient by reverse-mode differentiation of the composed expression.
inline ValueAndGrad mwer_loss_autodiff(const TransducerModel& m, const Array& features,
                                       const NBestScoringContext& ctx) {
  return eval_with_grad(
      [&](ad::Tape& t, const ad::Inputs& in) { return graph::mwer_loss(t, in, m.config, features, ctx); }, m.params);
}

}  // namespace mwerlab
