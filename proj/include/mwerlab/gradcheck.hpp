#pragma once

// Random small instances and gradient checks: analytic vs central differences
// and vs the reverse-mode tape.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mwerlab/autodiff.hpp"
#include "mwerlab/mwer.hpp"
#include "mwerlab/mwer_graph.hpp"
#include "mwerlab/transducer.hpp"

namespace mwerlab {

/// |V| = 2 + letters, every layer 3 wide. Stays under 200 scalars for one encoder layer.
inline ModelConfig small_config(const std::string& letters = "ab") {
  ModelConfig c;
  c.vocab = Vocab::characters(letters);
  c.feat_dim = 3;
  c.enc_hidden = {3};
  c.joint_dim = 3;
  c.pred_embed = 2;
  c.pred_hidden = 3;
  return c;
}

inline Array random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Array x = Array::matrix(rows, cols);
  for (double& v : x.values()) v = n(rng);
  return x;
}

inline TokenSeq random_label_seq(std::size_t U, const Vocab& v, std::mt19937_64& rng) {
  const auto labels = v.labels();
  std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 1);
  TokenSeq y;
  for (std::size_t i = 0; i < U; ++i) y.ids.push_back(labels[pick(rng)]);
  return y;
}

struct MwerInstance {
  TransducerModel model;
  Array x;
  NBestScoringContext ctx;
};

/// T in [2,4], U in [0,3], N in [2,5]. Hypotheses are redrawn until their word
/// errors are not all equal (otherwise the gradient is identically zero).
inline MwerInstance random_mwer_instance(std::mt19937_64& rng, FusionMode mode, double lambda_t, double lambda_s) {
  MwerInstance in{init_model(small_config(), rng()), {}, {}};
  std::uniform_int_distribution<std::size_t> T(2, 4), U(0, 3), N(2, 5);
  std::normal_distribution<double> lmscore(-4.0, 1.5);
  in.x = random_matrix(T(rng), 3, rng);
  in.ctx.config.mode = mode;
  in.ctx.config.lambda_t = lambda_t;
  in.ctx.config.lambda_s = lambda_s;
  in.ctx.reference = random_label_seq(3, in.model.vocab(), rng);
  const std::size_t n = N(rng);
  while (true) {
    in.ctx.nbest.hypotheses.clear();
    std::vector<std::size_t> errs;
    for (std::size_t i = 0; i < n; ++i) {
      Hypothesis h;
      h.tokens = random_label_seq(U(rng), in.model.vocab(), rng);
      h.log_p_extlm = lmscore(rng);
      errs.push_back(word_errors(h.tokens, in.ctx.reference, in.model.vocab()));
      in.ctx.nbest.hypotheses.push_back(h);
    }
    if (std::adjacent_find(errs.begin(), errs.end(), std::not_equal_to<>()) != errs.end()) return in;
  }
}

struct GradCheckReport {
  std::size_t instances = 0;
  double max_rel_fd = 0.0;    // analytic vs central differences
  double max_rel_tape = 0.0;  // analytic vs reverse mode (0 when not checked)
};

/// MWER gradient over `instances` random problems, cycling the three fusion modes.
inline GradCheckReport mwer_gradcheck(std::uint64_t seed, std::size_t instances, double lambda_t = 0.5,
                                      double lambda_s = 0.3, double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  GradCheckReport rep;
  for (std::size_t i = 0; i < instances; ++i) {
    MwerInstance in = random_mwer_instance(rng, static_cast<FusionMode>(i % 3), lambda_t, lambda_s);
    const MwerResult r = mwer_loss(in.model, in.x, in.ctx);
    const GradMap fd = finite_diff_grad(
        [&](const ParamSet& p) { return mwer_loss_value(TransducerModel{in.model.config, p}, in.x, in.ctx); },
        in.model.params, eps);
    const auto tape = mwer_loss_autodiff(in.model, in.x, in.ctx);
    rep.max_rel_fd = std::max(rep.max_rel_fd, relative_error(r.grads, fd));
    rep.max_rel_tape = std::max(rep.max_rel_tape, relative_error(r.grads, tape.grads));
    ++rep.instances;
  }
  return rep;
}

/// Transducer loss gradient vs central differences; T in [1,4], U in [0,3].
inline GradCheckReport transducer_gradcheck(std::uint64_t seed, std::size_t instances, double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> T(1, 4), U(0, 3);
  GradCheckReport rep;
  for (std::size_t i = 0; i < instances; ++i) {
    const TransducerModel m = init_model(small_config(), rng());
    const Array x = random_matrix(T(rng), 3, rng);
    const TokenSeq y = random_label_seq(U(rng), m.vocab(), rng);
    const auto r = transducer_loss(m, x, y);
    const GradMap fd = finite_diff_grad(
        [&](const ParamSet& p) { return transducer_loss(TransducerModel{m.config, p}, x, y).loss; }, m.params, eps);
    rep.max_rel_fd = std::max(rep.max_rel_fd, relative_error(r.grads, fd));
    ++rep.instances;
  }
  return rep;
}

}  // namespace mwerlab
