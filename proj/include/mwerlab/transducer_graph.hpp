#pragma once

// The transducer's log-posterior and internal-LM score expressed as autodiff
// graphs. The lattice recursion is unrolled onto the tape, so differentiating
// these graphs does not use the occupancy-based gradient in transducer.hpp.

#include <vector>

#include "mwerlab/autodiff.hpp"
#include "mwerlab/transducer.hpp"

namespace mwerlab::graph {

inline std::vector<ad::Var> encoder(ad::Tape& tape, const ad::Inputs& in, const ModelConfig& cfg,
                                    const Array& features) {
  std::vector<ad::Var> out;
  for (std::size_t t = 0; t < features.rows(); ++t) {
    auto row = features.row(t);
    ad::Var h = ad::constant(tape, Array::vector({row.begin(), row.end()}));
    for (std::size_t l = 0; l < cfg.enc_hidden.size(); ++l)
      h = ad::tanh(ad::affine(in.at(names::enc_w(l)), h, in.at(names::enc_b(l))));
    out.push_back(ad::affine(in.at(names::enc_proj_w), h, in.at(names::enc_proj_b)));
  }
  return out;
}

inline std::vector<ad::Var> predictor(const ad::Inputs& in, const ModelConfig& cfg, const TokenSeq& y) {
  std::vector<ad::Var> out;
  const ad::Var& emb = in.at(names::embed);
  ad::Var s = ad::tanh(ad::affine(in.at(names::rnn_in), ad::row(emb, static_cast<std::size_t>(cfg.vocab.blank_id())),
                                  in.at(names::rnn_b)));
  out.push_back(ad::matmul(in.at(names::pred_proj_w), s));
  for (TokenId tok : y.ids) {
    ad::Var pre = ad::add(ad::affine(in.at(names::rnn_in), ad::row(emb, static_cast<std::size_t>(tok)), in.at(names::rnn_b)),
                          ad::matmul(in.at(names::rnn_rec), s));
    s = ad::tanh(pre);
    out.push_back(ad::matmul(in.at(names::pred_proj_w), s));
  }
  return out;
}

inline ad::Var joint(const ad::Inputs& in, const ad::Var& f, const ad::Var& g) {
  ad::Var z = ad::tanh(ad::add(ad::add(f, g), in.at(names::joint_b)));
  return ad::log_softmax(ad::affine(in.at(names::out_w), z, in.at(names::out_b)));
}

inline ad::Var joint_without_encoder(const ad::Inputs& in, const ad::Var& g) {
  ad::Var z = ad::tanh(ad::add(g, in.at(names::joint_b)));
  return ad::log_softmax(ad::affine(in.at(names::out_w), z, in.at(names::out_b)));
}

/// log P(y|x) by the forward recursion, unrolled on the tape.
inline ad::Var log_posterior(ad::Tape& tape, const ad::Inputs& in, const ModelConfig& cfg,
                             const Array& features, const TokenSeq& y) {
  require_blank_free(y, cfg.vocab);
  const auto f = encoder(tape, in, cfg, features);
  const auto g = predictor(in, cfg, y);
  const std::size_t T = f.size(), U = y.size();
  const auto blank = static_cast<std::size_t>(cfg.vocab.blank_id());
  std::vector<std::vector<ad::Var>> lp(T, std::vector<ad::Var>(U + 1));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) lp[t][u] = joint(in, f[t], g[u]);
  std::vector<std::vector<ad::Var>> alpha(T, std::vector<ad::Var>(U + 1));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) {
        alpha[t][u] = ad::scalar(tape, 0.0);
        continue;
      }
      std::vector<ad::Var> terms;
      if (t > 0) terms.push_back(ad::add(alpha[t - 1][u], ad::index(lp[t - 1][u], blank)));
      if (u > 0)
        terms.push_back(ad::add(alpha[t][u - 1], ad::index(lp[t][u - 1], static_cast<std::size_t>(y.ids[u - 1]))));
      alpha[t][u] = terms.size() == 1 ? terms[0] : ad::log_sum_exp(ad::stack(terms));
    }
  return ad::add(alpha[T - 1][U], ad::index(lp[T - 1][U], blank));
}

/// Internal-LM log-probability of y including the end-of-sequence step.
inline ad::Var ilm_log_prob(const ad::Inputs& in, const ModelConfig& cfg, const TokenSeq& y) {
  const auto g = predictor(in, cfg, y);
  std::vector<ad::Var> steps;
  for (std::size_t u = 0; u <= y.size(); ++u) {
    const auto target = static_cast<std::size_t>(u < y.size() ? y.ids[u] : cfg.vocab.blank_id());
    steps.push_back(ad::index(joint_without_encoder(in, g[u]), target));
  }
  return ad::sum(ad::stack(steps));
}

}  // namespace mwerlab::graph
