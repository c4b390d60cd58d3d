// mwerlab: corpus generation, LM and transducer training, decoding, scoring,
// LM-weight sweeps, gradient checks and the full benchmark from one binary.
//
// Settings resolve as: built-in defaults < --config file < MWERLAB_* env < flags.
// Exit codes: 0 ok, 1 runtime/I-O, 2 configuration, 3 numeric failure, 4 gradcheck over tolerance.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/config.hpp"
#include "mwerlab/corpus.hpp"
#include "mwerlab/decoder.hpp"
#include "mwerlab/evalkit.hpp"
#include "mwerlab/experiment.hpp"
#include "mwerlab/extlm.hpp"
#include "mwerlab/gradcheck.hpp"
#include "mwerlab/training.hpp"

namespace fs = std::filesystem;
using namespace mwerlab;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kNumeric = 3, kGradcheck = 4 };

struct Key {
  const char* name;
  const char* value;
  const char* help;
};

// Every setting the binary understands. Flags are --name with '_' spelled '-'.
const std::vector<Key> kKeys = {
    {"seed", "1", "run seed; mixed into corpus, LM text, model init and batch order"},
    {"workers", "1", "worker threads for decoding and per-utterance losses"},
    {"out", "out", "output directory"},
    // corpus
    {"grammar", "", "comma list of domain grammar files (gen-corpus, train-lm)"},
    {"utterances", "100", "utterances per grammar (gen-corpus)"},
    {"train_ratio", "0.8", "train share of each domain (gen-corpus)"},
    {"dev_ratio", "0.1", "dev share of each domain (gen-corpus)"},
    {"test_ratio", "0.1", "test share of each domain (gen-corpus)"},
    {"noise_sigma", "", "feature noise override; empty keeps the grammar's value"},
    {"embedding_seed", "7", "seed of the per-token feature embeddings"},
    {"corpus", "", "corpus stem: <stem>.tsv plus <stem>.feats"},
    {"split", "test", "corpus split to decode, evaluate or sweep"},
    // external LM
    {"lm", "", "n-gram LM file (ARPA-style text)"},
    {"lm_order", "3", "n-gram order (train-lm)"},
    {"lm_k", "0.1", "add-k smoothing constant (train-lm)"},
    {"lm_sentences", "500", "sentences sampled per grammar (train-lm)"},
    // model
    {"model", "", "input checkpoint; empty means a fresh model from seed (train)"},
    {"feat_dim", "8", "feature dimension"},
    {"enc_hidden", "32", "encoder hidden sizes, comma list"},
    {"joint_dim", "24", "joint network width"},
    {"pred_embed", "16", "prediction network embedding size"},
    {"pred_hidden", "32", "prediction network hidden size"},
    // training
    {"loss", "mwer-ilme", "training loss: e2e, mwer, mwer-sf, mwer-ilme"},
    {"steps", "100", "optimizer steps"},
    {"learning_rate", "0.001", "learning rate (--lr)"},
    {"optimizer", "adam", "sgd or adam"},
    {"batch_size", "8", "utterances per step"},
    {"grad_clip", "0", "clip gradient L2 norm; 0 disables"},
    // decoding
    {"mode", "ilme", "decode fusion: none, shallow, ilme"},
    {"lambda_t", "0.25", "external LM weight"},
    {"lambda_s", "0.05", "internal LM weight (ilme only)"},
    {"beam", "5", "beam size"},
    {"nbest", "5", "hypotheses kept per utterance"},
    {"max_symbols_per_frame", "16", "label emissions allowed per frame"},
    {"nbest_file", "", "score this N-best TSV instead of decoding (evaluate)"},
    // sweep
    {"sweep_lambda_t", "0,0.1,0.25,0.5,0.75", "lambda_t grid (sweep)"},
    {"sweep_lambda_s", "0,0.05,0.1,0.2", "lambda_s grid; 0 alone sweeps shallow fusion (sweep)"},
    // gradcheck
    {"gradcheck_instances", "20", "random instances (gradcheck)"},
    {"gradcheck_tolerance", "1e-4", "largest accepted relative error (gradcheck)"},
    // experiment
    {"manifest", "", "benchmark manifest (experiment)"},
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (char& c : f)
    if (c == '_') c = '-';
  return f;
}

KeyValues defaults() {
  std::map<std::string, std::string> m;
  for (const Key& k : kKeys) m[k.name] = k.value;
  return KeyValues(m);
}

struct Settings {
  KeyValues kv = defaults();
  std::set<std::string> explicit_keys;  // set by config file, env or flag

  bool given(const std::string& k) const { return explicit_keys.count(k) != 0; }
};

// Runs f, attaching `key` to any ConfigError that does not name one.
template <typename F>
auto keyed(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    if (!e.key().empty()) throw;
    throw ConfigError(e.what(), key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for key '" + key + "'", key);
  } catch (const std::out_of_range&) {
    throw ConfigError("value out of range for key '" + key + "'", key);
  }
}

ModelConfig model_config(const KeyValues& kv) {
  ModelConfig c;
  c.vocab = Vocab::lowercase();
  c.feat_dim = kv.count("feat_dim");
  c.enc_hidden.clear();
  for (const auto& s : kv.list("enc_hidden")) c.enc_hidden.push_back(keyed("enc_hidden", [&] { return std::stoul(s); }));
  c.joint_dim = kv.count("joint_dim");
  c.pred_embed = kv.count("pred_embed");
  c.pred_hidden = kv.count("pred_hidden");
  keyed("feat_dim", [&] { c.validate(); });
  return c;
}

FusionConfig fusion_config(const KeyValues& kv, FusionMode mode) {
  FusionConfig f;
  f.mode = mode;
  f.lambda_t = kv.real("lambda_t");
  f.lambda_s = kv.real("lambda_s");
  f.beam = kv.count("beam");
  f.nbest = kv.count("nbest");
  f.max_symbols_per_frame = kv.count("max_symbols_per_frame");
  keyed("beam", [&] { f.validate(); });
  return f;
}

const std::string& required(const KeyValues& kv, const std::string& key, const std::string& cmd) {
  const std::string& v = kv.str(key);
  if (v.empty()) throw ConfigError(cmd + " needs " + key + " (--" + flag_name(key) + ")", key);
  return v;
}

fs::path out_dir(const KeyValues& kv) {
  fs::path p = kv.str("out");
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

std::vector<DomainSpec> grammars(const Settings& s, std::uint64_t seed) {
  std::vector<DomainSpec> out;
  for (const auto& path : s.kv.list("grammar")) {
    DomainSpec d = load_domain_spec(path);
    if (!s.kv.str("noise_sigma").empty()) d.noise_sigma = s.kv.real("noise_sigma");
    d.seed += 1000003ULL * seed;
    out.push_back(std::move(d));
  }
  if (out.empty()) throw ConfigError("no grammar files given (--grammar)", "grammar");
  return out;
}

std::vector<Utterance> corpus_split(const KeyValues& kv, const std::string& split, const std::string& cmd) {
  const auto all = load_corpus(required(kv, "corpus", cmd), Vocab::lowercase());
  std::vector<Utterance> out;
  for (const auto& u : all)
    if (u.split == split) out.push_back(u);
  if (out.empty()) throw ConfigError(cmd + ": corpus has no '" + split + "' utterances", "split");
  return out;
}

std::optional<NGramLM> maybe_lm(const KeyValues& kv) {
  if (kv.str("lm").empty()) return std::nullopt;
  return load_lm(kv.str("lm"));
}

// ---------------------------------------------------------------------------

int cmd_gen_corpus(const Settings& s) {
  const auto seed = static_cast<std::uint64_t>(s.kv.integer("seed"));
  const ModelConfig mc = model_config(s.kv);
  const auto emb = TokenEmbeddings::make(mc.vocab, mc.feat_dim, static_cast<std::uint64_t>(s.kv.integer("embedding_seed")));
  const SplitRatios r{s.kv.real("train_ratio"), s.kv.real("dev_ratio"), s.kv.real("test_ratio")};
  std::vector<Utterance> all;
  detail::run_stage("gen-corpus", seed, [&] {
    for (const DomainSpec& d : grammars(s, seed)) {
      const Corpus c = generate_domain(d, s.kv.count("utterances"), r, mc.vocab, emb);
      all.insert(all.end(), c.utterances.begin(), c.utterances.end());
    }
    return 0;
  });
  const fs::path stem = out_dir(s.kv) / "corpus";
  save_corpus(stem.string(), all, mc.vocab);
  std::cout << "wrote " << all.size() << " utterances to " << stem.string() << ".tsv\n";
  return kOk;
}

int cmd_train_lm(const Settings& s) {
  const auto seed = static_cast<std::uint64_t>(s.kv.integer("seed"));
  const Vocab v = Vocab::lowercase();
  std::vector<TokenSeq> text;
  std::string label;
  if (!s.kv.str("grammar").empty()) {
    for (const DomainSpec& d : grammars(s, seed)) {
      for (const auto& line : sample_text(d, s.kv.count("lm_sentences"), 0)) text.push_back(tokenize(line, v));
      label += (label.empty() ? "" : "+") + d.name;
    }
  } else {
    for (const auto& u : corpus_split(s.kv, "train", "train-lm")) text.push_back(u.reference);
    label = "corpus";
  }
  const int order = static_cast<int>(s.kv.integer("lm_order"));
  const NGramLM lm = keyed("lm_order", [&] { return train_ngram(text, v, order, s.kv.real("lm_k"), label); });
  const fs::path p = out_dir(s.kv) / "lm.arpa";
  save_lm(p.string(), lm);
  std::cout << "wrote " << order << "-gram LM (" << text.size() << " sentences) to " << p.string() << "\n";
  return kOk;
}

int cmd_train(const Settings& s) {
  const auto seed = static_cast<std::uint64_t>(s.kv.integer("seed"));
  TrainConfig tc;
  tc.objective = keyed("loss", [&] { return parse_objective(s.kv.str("loss")); });
  tc.steps = s.kv.count("steps");
  tc.batch_size = s.kv.count("batch_size");
  tc.seed = seed;
  tc.workers = static_cast<unsigned>(s.kv.count("workers"));
  tc.optimizer.kind = keyed("optimizer", [&] { return parse_optimizer(s.kv.str("optimizer")); });
  tc.optimizer.learning_rate = s.kv.real("learning_rate");
  tc.optimizer.grad_clip = s.kv.real("grad_clip");
  keyed("learning_rate", [&] { tc.optimizer.validate(); });
  tc.fusion = fusion_config(s.kv, objective_fusion(tc.objective));

  const auto lm = maybe_lm(s.kv);
  if (tc.objective == Objective::mwer_sf || tc.objective == Objective::mwer_ilme)
    if (!lm) throw ConfigError("loss " + s.kv.str("loss") + " needs an external LM (--lm)", "lm");
  const TransducerModel init =
      s.kv.str("model").empty() ? init_model(model_config(s.kv), seed) : load_model(s.kv.str("model"));
  const auto data = corpus_split(s.kv, "train", "train");

  const fs::path dir = out_dir(s.kv);
  std::ostringstream log;
  const TransducerModel m =
      detail::run_stage(objective_name(tc.objective), seed, [&] { return train(init, data, lm ? &*lm : nullptr, tc, &log); });
  save_model((dir / "model.ckpt").string(), m);
  write_file(dir / "train_log.tsv", log.str());
  std::cout << "trained " << tc.steps << " steps (" << objective_name(tc.objective) << "), wrote "
            << (dir / "model.ckpt").string() << "\n";
  return kOk;
}

struct Decoded {
  std::vector<NBestList> lists;
  std::map<std::string, TokenSeq> top1;
};

Decoded decode(const Settings& s, const std::vector<Utterance>& utts, const std::string& cmd) {
  const auto seed = static_cast<std::uint64_t>(s.kv.integer("seed"));
  const FusionMode mode = keyed("mode", [&] { return parse_fusion_mode(s.kv.str("mode")); });
  if (mode == FusionMode::none && (s.given("lambda_t") || s.given("lambda_s")))
    std::cerr << "warning: mode=none, lambda_t and lambda_s are ignored\n";
  if (mode == FusionMode::shallow && s.given("lambda_s"))
    std::cerr << "warning: mode=shallow, lambda_s is ignored\n";
  const FusionConfig cfg = fusion_config(s.kv, mode);
  const auto lm = maybe_lm(s.kv);
  if (mode != FusionMode::none && !lm) throw ConfigError("mode " + s.kv.str("mode") + " needs an external LM (--lm)", "lm");
  const TransducerModel m = load_model(required(s.kv, "model", cmd));
  Decoded d;
  d.top1 = detail::run_stage("decode", seed, [&] {
    return decode_top1(m, lm ? &*lm : nullptr, utts, cfg, static_cast<unsigned>(s.kv.count("workers")), &d.lists);
  });
  return d;
}

int cmd_decode(const Settings& s) {
  const auto utts = corpus_split(s.kv, s.kv.str("split"), "decode");
  const Decoded d = decode(s, utts, "decode");
  const Vocab v = Vocab::lowercase();
  const fs::path dir = out_dir(s.kv);
  std::ostringstream nb, hy;
  write_nbest(nb, d.lists, v);
  hy << "id\ttext\n";
  for (const auto& u : utts) hy << u.id << "\t" << detokenize(d.top1.at(u.id), v) << "\n";
  write_file(dir / "nbest.tsv", nb.str());
  write_file(dir / "hyps.tsv", hy.str());
  std::cout << "decoded " << utts.size() << " utterances, wrote " << (dir / "nbest.tsv").string() << "\n";
  return kOk;
}

int cmd_evaluate(const Settings& s) {
  const Vocab v = Vocab::lowercase();
  const auto utts = corpus_split(s.kv, s.kv.str("split"), "evaluate");
  std::map<std::string, TokenSeq> top1;
  if (!s.kv.str("nbest_file").empty()) {
    std::ifstream f(s.kv.str("nbest_file"));
    if (!f) throw std::runtime_error("cannot open " + s.kv.str("nbest_file"));
    for (const auto& l : read_nbest(f, v))
      if (!l.hypotheses.empty()) top1[l.utterance_id] = l.hypotheses.front().tokens;
  } else {
    top1 = decode(s, utts, "evaluate").top1;
  }
  Table t{"WER by domain (" + s.kv.str("split") + ")", {"Subset", "Words", "Errors", "WER"}, {}};
  std::vector<SubsetRow> rows;
  std::size_t missing = 0;
  for (const auto& [name, us] : by_domain(utts)) {
    const WerResult w = corpus_wer(top1, us, v);
    missing += w.missing.size();
    rows.push_back({name, w.words, w.wer});
    t.rows.push_back({name, std::to_string(w.words), std::to_string(w.errors), fmt(w.wer)});
  }
  std::size_t words = 0;
  for (const auto& r : rows) words += r.words;
  t.rows.push_back({"Avg.", std::to_string(words), "", fmt(weighted_average(rows))});
  EvalReport rep{{t}};
  const fs::path dir = out_dir(s.kv);
  write_file(dir / "report.tsv", rep.tsv());
  write_file(dir / "report.txt", rep.text());
  std::cout << rep.text();
  if (missing) std::cerr << "warning: " << missing << " utterances had no hypothesis and count as deletions\n";
  return kOk;
}

int cmd_sweep(const Settings& s) {
  const auto seed = static_cast<std::uint64_t>(s.kv.integer("seed"));
  const auto utts = corpus_split(s.kv, s.kv.str("split"), "sweep");
  const auto lm = load_lm(required(s.kv, "lm", "sweep"));
  const TransducerModel m = load_model(required(s.kv, "model", "sweep"));
  std::vector<GridPoint> grid;
  const auto lss = keyed("sweep_lambda_s", [&] { return s.kv.real_list("sweep_lambda_s"); });
  for (double t : keyed("sweep_lambda_t", [&] { return s.kv.real_list("sweep_lambda_t"); }))
    for (double l : lss) grid.push_back({t, l});
  const bool ilme = std::any_of(lss.begin(), lss.end(), [](double x) { return x != 0.0; });
  const FusionConfig base = fusion_config(s.kv, ilme ? FusionMode::ilme : FusionMode::shallow);
  const SweepResult r = detail::run_stage("sweep", seed, [&] {
    return sweep_lm_weights(m, &lm, utts, grid, base, static_cast<unsigned>(s.kv.count("workers")));
  });

  Table surface{"WER surface", {"lambda_t", "lambda_s"}, {}};
  for (const auto& n : r.subsets) surface.header.push_back(n);
  for (const auto& [g, w] : r.surface) {
    std::vector<std::string> row{fmt(g.lambda_t, 3), fmt(g.lambda_s, 3)};
    for (double x : w) row.push_back(fmt(x));
    surface.rows.push_back(row);
  }
  Table best{"Oracle weights", {"Subset", "Words", "lambda_t", "lambda_s", "WER"}, {}};
  for (std::size_t i = 0; i < r.subsets.size(); ++i)
    best.rows.push_back({r.subsets[i], std::to_string(r.words[i]), fmt(r.argmin[i].lambda_t, 3),
                         fmt(r.argmin[i].lambda_s, 3), fmt(r.best_wer[i])});
  best.rows.push_back({"Avg.", "", "", "", fmt(r.oracle_average())});
  EvalReport rep{{surface, best}};
  const fs::path dir = out_dir(s.kv);
  write_file(dir / "sweep.tsv", rep.tsv());
  write_file(dir / "sweep.txt", rep.text());
  std::cout << rep.text();
  return kOk;
}

int cmd_gradcheck(const Settings& s) {
  const auto seed = static_cast<std::uint64_t>(s.kv.integer("seed"));
  const double tol = s.kv.real("gradcheck_tolerance");
  const auto rep = detail::run_stage("gradcheck", seed, [&] {
    return mwer_gradcheck(seed, s.kv.count("gradcheck_instances"), s.kv.real("lambda_t"), s.kv.real("lambda_s"));
  });
  std::cout << "instances " << rep.instances << "\n"
            << "max relative error vs finite differences " << rep.max_rel_fd << "\n"
            << "max relative error vs reverse mode " << rep.max_rel_tape << "\n";
  if (!(rep.max_rel_fd < tol)) {
    std::cout << "FAIL: above tolerance " << tol << "\n";
    return kGradcheck;
  }
  std::cout << "ok: below tolerance " << tol << "\n";
  return kOk;
}

int cmd_experiment(const Settings& s) {
  const std::string path = required(s.kv, "manifest", "experiment");
  Manifest man = Manifest::load(path);
  if (s.given("workers")) man.kv.set("workers", s.kv.str("workers"));
  std::vector<std::uint64_t> seeds = keyed("seeds", [&] { return man.seeds(); });
  if (s.given("seed")) seeds = {static_cast<std::uint64_t>(s.kv.integer("seed"))};
  const fs::path dir = out_dir(s.kv);
  const std::string name = man.kv.str("name");
  for (std::uint64_t seed : seeds) {
    const ExperimentResult r = run_experiment(man, seed, [&](const std::string& stage) {
      std::cerr << "[seed " << seed << "] " << stage << "\n";
    });
    const std::string stem = name + "_seed" + std::to_string(seed);
    write_file(dir / (stem + ".report.tsv"), r.report.tsv());
    write_file(dir / (stem + ".report.txt"), r.report.text());
    for (const auto& [sys, text] : r.nbest_tsv) write_file(dir / (stem + "." + sys + ".nbest.tsv"), text);
    for (const auto& [sys, text] : r.train_logs) write_file(dir / (stem + "." + sys + ".train_log.tsv"), text);
    std::cout << "seed " << seed << "\n" << r.report.text() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mwerlab: MWER / MWER-SF / MWER-ILME training lab for a small transducer with n-gram LM fusion"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(
      "Settings: defaults < --config FILE (key=value lines) < MWERLAB_<KEY> environment < flags.\n"
      "Exit codes: 0 ok, 1 runtime or I/O error, 2 configuration error (names the key),\n"
      "            3 numeric failure (names the stage), 4 gradcheck above tolerance.");

  std::string config_path;
  app.add_option("--config", config_path, "key=value settings file");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_opts;
  for (const Key& k : kKeys) {
    std::string names = "--" + flag_name(k.name);
    if (std::string(k.name) == "learning_rate") names = "--lr," + names;
    auto* opt = app.add_option(names, flag_values[k.name], std::string(k.help) + " [" + k.value + "]");
    opt->option_text("VALUE");
    flag_opts[k.name] = opt;
  }

  struct Cmd {
    const char* name;
    const char* help;
    int (*run)(const Settings&);
  };
  const std::vector<Cmd> cmds = {
      {"gen-corpus", "synthesize a corpus from grammar files -> <out>/corpus.tsv, corpus.feats", cmd_gen_corpus},
      {"train-lm", "train an n-gram LM from grammar samples or corpus transcripts -> <out>/lm.arpa", cmd_train_lm},
      {"train", "train a transducer with the chosen loss -> <out>/model.ckpt, train_log.tsv", cmd_train},
      {"decode", "beam search with fusion -> <out>/nbest.tsv, hyps.tsv", cmd_decode},
      {"evaluate", "word error rate by domain -> <out>/report.tsv, report.txt", cmd_evaluate},
      {"sweep", "LM weight grid with per-subset oracle weights -> <out>/sweep.tsv, sweep.txt", cmd_sweep},
      {"gradcheck", "MWER gradient vs finite differences on random instances", cmd_gradcheck},
      {"experiment", "run the benchmark manifest -> <out>/<name>_seed<N>.*", cmd_experiment},
  };
  std::map<CLI::App*, const Cmd*> by_app;
  for (const Cmd& c : cmds) by_app[app.add_subcommand(c.name, c.help)] = &c;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    Settings s;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot open config file " + config_path, "config");
      std::stringstream ss;
      ss << f.rdbuf();
      s.kv.merge_text(ss.str(), config_path);
      std::istringstream lines(ss.str());
      for (std::string line; std::getline(lines, line);) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        if (auto eq = line.find('='); eq != std::string::npos) s.explicit_keys.insert(KeyValues::trim(line.substr(0, eq)));
      }
    }
    for (const Key& k : kKeys) {
      std::string var = "MWERLAB_";
      for (char c : std::string(k.name)) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (std::getenv(var.c_str())) s.explicit_keys.insert(k.name);
    }
    s.kv.merge_env("MWERLAB_");
    for (const Key& k : kKeys)
      if (flag_opts[k.name]->count() > 0) {
        s.kv.set(k.name, flag_values[k.name]);
        s.explicit_keys.insert(k.name);
      }
    for (const auto& [sub, cmd] : by_app)
      if (sub->parsed()) return cmd->run(s);
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error" << (e.key().empty() ? "" : " (key " + e.key() + ")") << ": " << e.what() << "\n";
    return kConfig;
  } catch (const StageError& e) {
    std::cerr << (e.numeric() ? "numeric error in stage '" + e.stage() + "': " : "error: ") << e.what() << "\n";
    return e.numeric() ? kNumeric : kRuntime;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
