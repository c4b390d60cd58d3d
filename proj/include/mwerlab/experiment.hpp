#pragma once

// The four-system benchmark: a transducer baseline, then MWER, MWER-SF and
// MWER-ILME fine-tuning from it, each evaluated with its own inference fusion
// and the training-time weights; plus an LM-weight sweep of the MWER model.

#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/config.hpp"
#include "mwerlab/corpus.hpp"
#include "mwerlab/evalkit.hpp"
#include "mwerlab/extlm.hpp"
#include "mwerlab/training.hpp"

namespace mwerlab {

inline KeyValues manifest_defaults() {
  return KeyValues({
      {"name", "benchmark"},
      {"grammar_dir", "grammars"},
      {"domains", ""},
      {"ood_domain", ""},
      {"train_per_domain", "40"},  // one count, or one per domain
      {"test_per_domain", "20"},
      {"ood_test", "20"},
      {"noise_sigma", ""},  // empty: per-grammar value
      {"embedding_seed", "7"},
      {"lm_sentences_per_domain", "500"},
      {"lm_order", "3"},
      {"lm_k", "0.1"},
      {"feat_dim", "8"},
      {"enc_hidden", "32"},
      {"joint_dim", "24"},
      {"pred_embed", "16"},
      {"pred_hidden", "32"},
      {"baseline_steps", "300"},
      {"baseline_lr", "0.01"},
      {"baseline_optimizer", "adam"},
      {"mwer_steps", "50"},
      {"mwer_lr", "0.001"},
      {"mwer_optimizer", "adam"},
      {"batch_size", "8"},
      {"grad_clip", "0"},
      {"beam", "5"},
      {"nbest", "5"},
      {"max_symbols_per_frame", "16"},
      {"lambda_t", "0.25"},
      {"lambda_s", "0.05"},
      {"sweep_lambda_t", "0,0.1,0.25,0.5"},
      {"sweep_lambda_s", "0,0.05,0.1"},
      {"seeds", "1,2,3"},
      {"workers", "1"},
  });
}

struct Manifest {
  KeyValues kv = manifest_defaults();
  std::filesystem::path base_dir;  // grammar_dir is relative to this

  static Manifest load(const std::string& path) {
    Manifest m;
    m.kv.merge_file(path);
    m.base_dir = std::filesystem::path(path).parent_path();
    return m;
  }
  static Manifest from_text(const std::string& text, std::filesystem::path base = ".") {
    Manifest m;
    m.kv.merge_text(text, "manifest");
    m.base_dir = std::move(base);
    return m;
  }

  ModelConfig model_config() const {
    ModelConfig c;
    c.vocab = Vocab::lowercase();
    c.feat_dim = kv.count("feat_dim");
    c.enc_hidden.clear();
    for (const auto& s : kv.list("enc_hidden")) c.enc_hidden.push_back(std::stoul(s));
    c.joint_dim = kv.count("joint_dim");
    c.pred_embed = kv.count("pred_embed");
    c.pred_hidden = kv.count("pred_hidden");
    c.validate();
    return c;
  }

  FusionConfig fusion(FusionMode mode) const {
    FusionConfig f;
    f.mode = mode;
    f.lambda_t = kv.real("lambda_t");
    f.lambda_s = kv.real("lambda_s");
    f.beam = kv.count("beam");
    f.nbest = kv.count("nbest");
    f.max_symbols_per_frame = kv.count("max_symbols_per_frame");
    f.validate();
    return f;
  }

  DomainSpec domain(const std::string& name, std::uint64_t seed) const {
    DomainSpec d = load_domain_spec((base_dir / kv.str("grammar_dir") / (name + ".grammar")).string());
    if (!kv.str("noise_sigma").empty()) d.noise_sigma = kv.real("noise_sigma");
    d.seed += 1000003ULL * seed;
    return d;
  }

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (const auto& x : kv.list("seeds")) s.push_back(std::stoull(x));
    return s;
  }
};

struct SystemResult {
  std::string name;
  Objective objective = Objective::e2e;
  FusionConfig fusion;
  std::vector<SubsetRow> rows;
  double average = 0.0;
  std::vector<SubsetRow> ood_rows;
  double ood_average = 0.0;
};

struct ExperimentData {
  std::vector<Utterance> train, test, ood_test;
  std::vector<std::string> domains;
  NGramLM lm, ood_lm;
  std::vector<std::pair<std::string, double>> kl;  // test domain vs training transcripts
};

struct ExperimentResult {
  std::uint64_t seed = 0;
  std::vector<SystemResult> systems;  // baseline, MWER, MWER-SF, MWER-ILME
  SweepResult sweep_sf, sweep_ilme;
  EvalReport report;
  std::map<std::string, std::string> nbest_tsv;  // system -> N-best dump
  std::map<std::string, std::string> train_logs;
  std::map<std::string, TransducerModel> models;

  const SystemResult& system(const std::string& name) const {
    for (const auto& s : systems)
      if (s.name == name) return s;
    throw ContractError("no system " + name);
  }
};

namespace detail {

template <typename F>
auto run_stage(const std::string& stage, std::uint64_t seed, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const NumericError& e) {
    throw StageError(stage, seed, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(stage, seed, e.what(), false);
  }
}

inline std::vector<std::string> texts(const std::vector<Utterance>& us) {
  std::vector<std::string> out;
  for (const auto& u : us) out.push_back(u.text);
  return out;
}

}  // namespace detail

inline ExperimentData build_data(const Manifest& man, std::uint64_t seed) {
  ExperimentData d;
  const ModelConfig mc = man.model_config();
  const Vocab& v = mc.vocab;
  const auto emb = TokenEmbeddings::make(v, mc.feat_dim, static_cast<std::uint64_t>(man.kv.integer("embedding_seed")));
  d.domains = man.kv.list("domains");
  if (d.domains.empty()) throw ConfigError("manifest: domains is empty", "domains");
  std::vector<std::size_t> n_train;
  for (const auto& s : man.kv.list("train_per_domain")) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (*end != '\0' || v < 0) throw ConfigError("manifest: bad train_per_domain entry '" + s + "'", "train_per_domain");
    n_train.push_back(static_cast<std::size_t>(v));
  }
  if (n_train.size() == 1) n_train.assign(d.domains.size(), n_train.front());
  if (n_train.size() != d.domains.size())
    throw ConfigError("manifest: train_per_domain needs one count or one per domain", "train_per_domain");
  const std::size_t n_test = man.kv.count("test_per_domain");
  std::vector<TokenSeq> lm_text;
  const std::size_t n_lm = man.kv.count("lm_sentences_per_domain");
  std::map<std::string, std::vector<std::string>> test_text;
  for (std::size_t i = 0; i < d.domains.size(); ++i) {
    const std::string& name = d.domains[i];
    const DomainSpec spec = man.domain(name, seed);
    const Corpus c = generate_domain(spec, n_train[i] + n_test,
                                     SplitRatios{static_cast<double>(n_train[i]), 0.0, static_cast<double>(n_test)}, v, emb);
    for (const auto& u : c.utterances) {
      if (u.split == "train") d.train.push_back(u);
      if (u.split == "test") {
        d.test.push_back(u);
        test_text[name].push_back(u.text);
      }
    }
    for (const auto& s : sample_text(spec, n_lm, 0)) lm_text.push_back(tokenize(s, v));
  }
  const int order = static_cast<int>(man.kv.integer("lm_order"));
  const double k = man.kv.real("lm_k");
  d.lm = train_ngram(lm_text, v, order, k, "multi-domain");
  const auto train_uni = word_unigram(detail::texts(d.train));
  for (const auto& name : d.domains) d.kl.emplace_back(name, unigram_kl(word_unigram(test_text[name]), train_uni));

  const std::string ood = man.kv.str("ood_domain");
  if (!ood.empty()) {
    const DomainSpec spec = man.domain(ood, seed);
    const std::size_t n = man.kv.count("ood_test");
    const Corpus c = generate_domain(spec, n, SplitRatios{0.0, 0.0, 1.0}, v, emb);
    d.ood_test = c.utterances;
    std::vector<TokenSeq> ood_text;
    for (const auto& s : sample_text(spec, n_lm, 0)) ood_text.push_back(tokenize(s, v));
    d.ood_lm = train_ngram(ood_text, v, order, k, ood);
    d.kl.emplace_back(ood, unigram_kl(word_unigram(detail::texts(d.ood_test)), train_uni));
  }
  return d;
}

inline std::vector<SubsetRow> evaluate_subsets(const TransducerModel& m, const NGramLM* lm,
                                               const std::vector<Utterance>& utts, const FusionConfig& cfg,
                                               unsigned workers, std::vector<NBestList>* nbest) {
  std::vector<NBestList> lists;
  const auto hyps = decode_top1(m, lm, utts, cfg, workers, &lists);
  std::vector<SubsetRow> rows;
  for (const auto& [name, us] : by_domain(utts)) {
    const auto w = corpus_wer(hyps, us, m.vocab());
    rows.push_back({name, w.words, w.wer});
  }
  if (nbest) nbest->insert(nbest->end(), lists.begin(), lists.end());
  return rows;
}

/// Runs the whole benchmark for one seed. `progress` (optional) receives stage names.
inline ExperimentResult run_experiment(const Manifest& man, std::uint64_t seed,
                                       const std::function<void(const std::string&)>& progress = {}) {
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  ExperimentResult res;
  res.seed = seed;
  const auto workers = static_cast<unsigned>(man.kv.count("workers"));
  const ModelConfig mc = detail::run_stage("config", seed, [&] { return man.model_config(); });

  note("corpus");
  const ExperimentData data = detail::run_stage("corpus", seed, [&] { return build_data(man, seed); });
  if (data.train.empty()) throw StageError("corpus", seed, "no training utterances", false);

  TrainConfig base_tc;
  base_tc.objective = Objective::e2e;
  base_tc.steps = man.kv.count("baseline_steps");
  base_tc.batch_size = man.kv.count("batch_size");
  base_tc.seed = seed;
  base_tc.workers = workers;
  base_tc.optimizer.kind = parse_optimizer(man.kv.str("baseline_optimizer"));
  base_tc.optimizer.learning_rate = man.kv.real("baseline_lr");
  base_tc.optimizer.grad_clip = man.kv.real("grad_clip");

  note("baseline");
  std::ostringstream base_log;
  const TransducerModel baseline = detail::run_stage("baseline", seed, [&] {
    return train(init_model(mc, seed), data.train, nullptr, base_tc, &base_log);
  });
  res.train_logs["baseline"] = base_log.str();
  res.models["baseline"] = baseline;

  struct Spec {
    std::string name;
    Objective obj;
  };
  const std::vector<Spec> specs{{"T-T", Objective::e2e},
                                {"MWER", Objective::mwer},
                                {"MWER-SF", Objective::mwer_sf},
                                {"MWER-ILME", Objective::mwer_ilme}};
  for (const Spec& s : specs) {
    TransducerModel model = baseline;
    if (s.obj != Objective::e2e) {
      note(objective_name(s.obj));
      TrainConfig tc = base_tc;
      tc.objective = s.obj;
      tc.steps = man.kv.count("mwer_steps");
      tc.optimizer.kind = parse_optimizer(man.kv.str("mwer_optimizer"));
      tc.optimizer.learning_rate = man.kv.real("mwer_lr");
      tc.fusion = man.fusion(objective_fusion(s.obj));
      std::ostringstream log;
      model = detail::run_stage(objective_name(s.obj), seed,
                                [&] { return train(baseline, data.train, &data.lm, tc, &log); });
      res.train_logs[s.name] = log.str();
      res.models[s.name] = model;
    }
    note("evaluate " + s.name);
    SystemResult sr;
    sr.name = s.name;
    sr.objective = s.obj;
    sr.fusion = man.fusion(objective_fusion(s.obj));
    std::vector<NBestList> dump;
    detail::run_stage("evaluate " + s.name, seed, [&] {
      sr.rows = evaluate_subsets(model, &data.lm, data.test, sr.fusion, workers, &dump);
      sr.average = weighted_average(sr.rows);
      if (!data.ood_test.empty()) {
        sr.ood_rows = evaluate_subsets(model, &data.ood_lm, data.ood_test, sr.fusion, workers, &dump);
        sr.ood_average = weighted_average(sr.ood_rows);
      }
      return 0;
    });
    std::ostringstream os;
    write_nbest(os, dump, mc.vocab);
    res.nbest_tsv[s.name] = os.str();
    res.systems.push_back(std::move(sr));
  }

  note("sweep");
  detail::run_stage("sweep", seed, [&] {
    const auto lts = man.kv.real_list("sweep_lambda_t");
    const auto lss = man.kv.real_list("sweep_lambda_s");
    std::vector<GridPoint> sf_grid, ilme_grid;
    for (double t : lts) {
      sf_grid.push_back({t, 0.0});
      for (double s : lss) ilme_grid.push_back({t, s});
    }
    const TransducerModel& mwer = res.models.at("MWER");
    res.sweep_sf = sweep_lm_weights(mwer, &data.lm, data.test, sf_grid, man.fusion(FusionMode::shallow), workers);
    res.sweep_ilme = sweep_lm_weights(mwer, &data.lm, data.test, ilme_grid, man.fusion(FusionMode::ilme), workers);
    return 0;
  });

  // Reports.
  Table corpora{"Corpora (seed " + std::to_string(seed) + ")", {"Subset", "Role", "Utts", "Words", "KL vs train"}, {}};
  {
    auto row = [&](const std::string& name, const std::string& role, const std::vector<Utterance>& us) {
      std::size_t n = 0, w = 0;
      for (const auto& u : us)
        if (u.domain == name) ++n, w += word_count(u.reference, mc.vocab);
      double kl = 0.0;
      for (const auto& [d, v] : data.kl)
        if (d == name) kl = v;
      corpora.rows.push_back({name, role, std::to_string(n), std::to_string(w), fmt(kl, 3)});
    };
    for (const auto& d : data.domains) row(d, "test", data.test);
    if (!data.ood_test.empty()) row(man.kv.str("ood_domain"), "ood test", data.ood_test);
    std::size_t w = 0;
    for (const auto& u : data.train) w += word_count(u.reference, mc.vocab);
    corpora.rows.push_back({"(train)", "train", std::to_string(data.train.size()), std::to_string(w), "-"});
  }

  auto system_table = [&](const std::string& title, bool ood) {
    Table t{title, {"Subset", "Words", "T-T", "MWER", "MWER-SF", "MWER-ILME", "WERR", "WERR-SF"}, {}};
    const auto& first = ood ? res.systems[0].ood_rows : res.systems[0].rows;
    for (std::size_t i = 0; i < first.size(); ++i) {
      std::vector<std::string> r{first[i].subset, std::to_string(first[i].words)};
      for (const auto& s : res.systems) r.push_back(fmt((ood ? s.ood_rows : s.rows)[i].wer));
      const double mw = (ood ? res.systems[1].ood_rows : res.systems[1].rows)[i].wer;
      const double sf = (ood ? res.systems[2].ood_rows : res.systems[2].rows)[i].wer;
      const double il = (ood ? res.systems[3].ood_rows : res.systems[3].rows)[i].wer;
      r.push_back(fmt(relative_reduction(mw, il), 1));
      r.push_back(fmt(relative_reduction(sf, il), 1));
      t.rows.push_back(r);
    }
    std::size_t words = 0;
    for (const auto& r : first) words += r.words;
    std::vector<std::string> avg{"Avg.", std::to_string(words)};
    for (const auto& s : res.systems) avg.push_back(fmt(ood ? s.ood_average : s.average));
    const double mw = ood ? res.systems[1].ood_average : res.systems[1].average;
    const double sf = ood ? res.systems[2].ood_average : res.systems[2].average;
    const double il = ood ? res.systems[3].ood_average : res.systems[3].average;
    avg.push_back(fmt(relative_reduction(mw, il), 1));
    avg.push_back(fmt(relative_reduction(sf, il), 1));
    t.rows.push_back(avg);
    return t;
  };

  Table oracle{"Oracle LM weights for the MWER model (tuned on the test subsets)",
               {"Subset", "No LM", "Call SF", "Call ILME", "All SF", "All ILME", "ILME weights", "MWER-ILME"},
               {}};
  {
    const auto& sf = res.sweep_sf;
    const auto& il = res.sweep_ilme;
    oracle.header[2] = sf.subsets.front() + " SF";
    oracle.header[3] = il.subsets.front() + " ILME";
    const auto& sf_first = sf.surface.at(sf.argmin.front());
    const auto& il_first = il.surface.at(il.argmin.front());
    const SystemResult& mwer = res.systems[1];
    const SystemResult& ilme = res.systems[3];
    for (std::size_t i = 0; i < sf.subsets.size(); ++i) {
      char w[64];
      std::snprintf(w, sizeof w, "(%.2f, %.2f)", il.argmin[i].lambda_t, il.argmin[i].lambda_s);
      oracle.rows.push_back({sf.subsets[i], fmt(mwer.rows[i].wer), fmt(sf_first[i]), fmt(il_first[i]),
                             fmt(sf.best_wer[i]), fmt(il.best_wer[i]), w, fmt(ilme.rows[i].wer)});
    }
    oracle.rows.push_back({"Avg.", fmt(mwer.average), fmt(sf.transferred_average(0)), fmt(il.transferred_average(0)),
                           fmt(sf.oracle_average()), fmt(il.oracle_average()), "-", fmt(ilme.average)});
  }

  res.report.tables.push_back(corpora);
  res.report.tables.push_back(system_table("WER (%) on the multi-domain test subsets", false));
  res.report.tables.push_back(oracle);
  if (!data.ood_test.empty())
    res.report.tables.push_back(system_table("WER (%) on the out-of-domain test set with its own LM", true));
  return res;
}

}  // namespace mwerlab
