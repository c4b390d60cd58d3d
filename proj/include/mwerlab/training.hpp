#pragma once

// Optimizers and the per-batch training steps: the transducer loss (baseline)
// and the three MWER objectives with N-best regenerated from the current model.

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mwerlab/decoder.hpp"
#include "mwerlab/mwer.hpp"

namespace mwerlab {

enum class Objective { e2e, mwer, mwer_sf, mwer_ilme };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::e2e: return "e2e";
    case Objective::mwer: return "mwer";
    case Objective::mwer_sf: return "mwer-sf";
    case Objective::mwer_ilme: return "mwer-ilme";
  }
  return "?";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "e2e") return Objective::e2e;
  if (s == "mwer") return Objective::mwer;
  if (s == "mwer-sf") return Objective::mwer_sf;
  if (s == "mwer-ilme") return Objective::mwer_ilme;
  throw ConfigError("unknown loss '" + s + "' (expected e2e, mwer, mwer-sf, mwer-ilme)");
}

/// Fusion mode used for N-best generation and posteriors.
inline FusionMode objective_fusion(Objective o) {
  switch (o) {
    case Objective::mwer_sf: return FusionMode::shallow;
    case Objective::mwer_ilme: return FusionMode::ilme;
    default: return FusionMode::none;
  }
}

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, adam)");
}

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("lr must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  }
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void apply(ParamSet& params, const GradMap& grads_in) {
    GradMap grads = grads_in;
    if (cfg_.grad_clip > 0.0) {
      const double n = grads.l2_norm();
      if (n > cfg_.grad_clip) grads.scale(cfg_.grad_clip / n);
    }
    ++t_;
    for (const auto& [name, g] : grads.entries()) {
      auto p = params.mutable_value(name).values();
      auto gv = g.values();
      if (cfg_.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg_.learning_rate * gv[i];
        continue;
      }
      auto [mit, _m] = m_.try_emplace(name, std::vector<double>(p.size(), 0.0));
      auto [vit, _v] = v_.try_emplace(name, std::vector<double>(p.size(), 0.0));
      auto& m = mit->second;
      auto& v = vit->second;
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gv[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gv[i] * gv[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct BatchStats {
  double loss = 0.0;             // mean over utterances
  double expected_wer = 0.0;     // 100 * sum expected errors / sum reference words (MWER objectives)
  double grad_norm = 0.0;        // L2 norm of the mean gradient, before clipping
  std::size_t utterances = 0;
};

struct StepResult {
  ParamSet params;
  BatchStats stats;
};

/// Runs f(i) for i in [0, n) on up to `workers` threads. Results must go to slot i.
template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

namespace detail {

struct UttOutcome {
  double loss = 0.0;
  double expected_errors = 0.0;
  std::size_t ref_words = 0;
  GradMap grads;
};

inline StepResult finish_step(const TransducerModel& m, std::vector<UttOutcome>& outs, Optimizer& opt) {
  StepResult r;
  r.params = m.params;
  GradMap total = GradMap::zeros_like(m.params);
  double err = 0.0;
  std::size_t words = 0;
  for (const UttOutcome& o : outs) {
    total.add_scaled(o.grads, 1.0);
    r.stats.loss += o.loss;
    err += o.expected_errors;
    words += o.ref_words;
  }
  const double n = static_cast<double>(outs.size());
  total.scale(1.0 / n);
  r.stats.loss /= n;
  r.stats.expected_wer = words ? 100.0 * err / static_cast<double>(words) : 0.0;
  r.stats.grad_norm = total.l2_norm();
  r.stats.utterances = outs.size();
  if (!std::isfinite(r.stats.grad_norm) || !std::isfinite(r.stats.loss))
    throw NumericError("numeric overflow in training step");
  opt.apply(r.params, total);
  return r;
}

}  // namespace detail

/// One update of the transducer loss averaged over the batch.
inline StepResult e2e_training_step(const TransducerModel& m, std::span<const Utterance> batch, Optimizer& opt,
                                    unsigned workers = 1) {
  if (batch.empty()) throw ContractError("training step: empty batch");
  std::vector<detail::UttOutcome> outs(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    auto r = transducer_loss(m, batch[i].features, batch[i].reference);
    outs[i].loss = r.loss;
    outs[i].grads = std::move(r.grads);
    outs[i].ref_words = word_count(batch[i].reference, m.vocab());
  });
  return detail::finish_step(m, outs, opt);
}

/// One MWER update: decode N-best with `cfg` fusion at the current parameters,
/// then descend the mean expected-error loss with the hypotheses held fixed.
inline StepResult mwer_training_step(const TransducerModel& m, std::span<const Utterance> batch, const NGramLM* lm,
                                     const FusionConfig& cfg, Optimizer& opt, unsigned workers = 1) {
  if (batch.empty()) throw ContractError("training step: empty batch");
  cfg.validate();
  std::vector<detail::UttOutcome> outs(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const Utterance& u = batch[i];
    NBestScoringContext ctx{beam_search(m, lm, u.features, cfg, u.id), u.reference, cfg, 0.0};
    MwerResult r = mwer_loss(m, u.features, ctx);
    outs[i].loss = r.loss;
    outs[i].expected_errors = r.expected_errors;
    outs[i].grads = std::move(r.grads);
    outs[i].ref_words = word_count(u.reference, m.vocab());
  });
  return detail::finish_step(m, outs, opt);
}

struct TrainConfig {
  Objective objective = Objective::mwer;
  FusionConfig fusion;         // mode is overridden by the objective
  OptimizerConfig optimizer;
  std::size_t steps = 0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

inline const char* kTrainLogHeader = "step\tobjective\tbatch_expected_wer\tloss\tgrad_norm\tlambda_t\tlambda_s\tseed";

/// Fusion settings actually used for an objective.
inline FusionConfig training_fusion(const TrainConfig& tc) {
  FusionConfig f = tc.fusion;
  f.mode = objective_fusion(tc.objective);
  return f;
}

/// Runs `steps` updates over shuffled mini-batches (reshuffled each pass, seeded).
/// Writes one log row per step when `log` is non-null.
inline TransducerModel train(const TransducerModel& init, const std::vector<Utterance>& data, const NGramLM* lm,
                             const TrainConfig& tc, std::ostream* log = nullptr) {
  if (tc.steps > 0 && data.empty()) throw ContractError("train: no training utterances");
  if (tc.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  TransducerModel m = init;
  Optimizer opt(tc.optimizer);
  const FusionConfig fusion = training_fusion(tc);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  if (log) *log << kTrainLogHeader << "\n";
  for (std::size_t step = 1; step <= tc.steps; ++step) {
    std::vector<Utterance> batch;
    while (batch.size() < std::min(tc.batch_size, data.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    StepResult r = tc.objective == Objective::e2e
                       ? e2e_training_step(m, batch, opt, tc.workers)
                       : mwer_training_step(m, batch, lm, fusion, opt, tc.workers);
    m.params = std::move(r.params);
    if (log) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%zu\t%s\t%s\t%.6f\t%.6f\t%.4g\t%.4g\t%llu\n", step,
                    objective_name(tc.objective),
                    tc.objective == Objective::e2e ? "NA" : std::to_string(r.stats.expected_wer).c_str(),
                    r.stats.loss, r.stats.grad_norm, fusion.effective_lambda_t(), fusion.effective_lambda_s(),
                    static_cast<unsigned long long>(tc.seed));
      *log << buf;
    }
  }
  return m;
}

}  // namespace mwerlab
