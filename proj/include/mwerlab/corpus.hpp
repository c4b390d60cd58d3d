#pragma once

// Synthetic multi-domain corpora: sentences from weighted grammars, rendered
// as pseudo-acoustic frames (a fixed vector per token plus Gaussian noise).
//
// Grammar text format, one item per line, '#' starts a comment:
//
//   name=<domain name>
//   noise_sigma=<real >= 0>
//   frames_per_token=<int >= 1>
//   seed=<integer>
//   <LHS> -> <sym> <sym> ... [: <weight>]
//
// Upper-case symbols are non-terminals, anything else is a word. Each
// production line is one alternative of its LHS (weight defaults to 1).
// Sampling starts from S.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/checkpoint.hpp"
#include "mwerlab/transducer.hpp"
#include "mwerlab/vocab.hpp"

namespace mwerlab {

struct Production {
  std::vector<std::string> rhs;
  double weight = 1.0;
};

struct Grammar {
  std::map<std::string, std::vector<Production>> rules;

  static bool is_nonterminal(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return (c >= 'A' && c <= 'Z') || c == '_'; });
  }

  /// Every terminal reachable from any rule, sorted.
  std::vector<std::string> words() const {
    std::set<std::string> w;
    for (const auto& [_, alts] : rules)
      for (const auto& p : alts)
        for (const auto& s : p.rhs)
          if (!is_nonterminal(s)) w.insert(s);
    return {w.begin(), w.end()};
  }
};

struct DomainSpec {
  std::string name;
  Grammar grammar;
  std::vector<std::string> word_list;  // filled from the grammar
  double noise_sigma = 0.0;
  std::size_t frames_per_token = 1;
  std::uint64_t seed = 1;

  void validate(const Vocab& v) const {
    if (name.empty()) throw ConfigError("domain spec: missing name");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("domain spec: noise_sigma must be >= 0");
    if (frames_per_token < 1) throw ConfigError("domain spec: frames_per_token must be >= 1");
    if (!grammar.rules.count("S")) throw ConfigError("domain spec '" + name + "': grammar has no S rule");
    for (const auto& [lhs, alts] : grammar.rules) {
      for (const auto& p : alts) {
        if (!(p.weight > 0.0)) throw ConfigError("domain spec '" + name + "': non-positive weight for " + lhs);
        for (const auto& s : p.rhs)
          if (Grammar::is_nonterminal(s) && !grammar.rules.count(s))
            throw ConfigError("domain spec '" + name + "': undefined non-terminal " + s);
      }
    }
    for (const auto& w : word_list) tokenize(w, v);
  }
};

inline DomainSpec parse_domain_spec(const std::string& text) {
  DomainSpec d;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto arrow = line.find("->");
    if (arrow != std::string::npos) {
      const std::string lhs = trim(line.substr(0, arrow));
      std::string rhs = line.substr(arrow + 2);
      Production p;
      if (auto colon = rhs.find(':'); colon != std::string::npos) {
        try {
          p.weight = std::stod(trim(rhs.substr(colon + 1)));
        } catch (const std::exception&) {
          throw FormatError("grammar line " + std::to_string(lineno) + ": bad weight");
        }
        rhs.erase(colon);
      }
      std::istringstream rs(rhs);
      for (std::string s; rs >> s;) p.rhs.push_back(s);
      if (!Grammar::is_nonterminal(lhs)) throw FormatError("grammar line " + std::to_string(lineno) + ": LHS must be upper case");
      if (p.rhs.empty()) throw FormatError("grammar line " + std::to_string(lineno) + ": empty production");
      d.grammar.rules[lhs].push_back(std::move(p));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("grammar line " + std::to_string(lineno) + ": expected key=value or a rule");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    try {
      if (key == "name") d.name = val;
      else if (key == "noise_sigma") d.noise_sigma = std::stod(val);
      else if (key == "frames_per_token") d.frames_per_token = std::stoul(val);
      else if (key == "seed") d.seed = std::stoull(val);
      else throw FormatError("grammar line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("grammar line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  d.word_list = d.grammar.words();
  return d;
}

inline DomainSpec load_domain_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open grammar file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_domain_spec(ss.str());
}

/// Draws one sentence (space-separated words) from S.
inline std::string sample_sentence(const Grammar& g, std::mt19937_64& rng) {
  std::vector<std::string> out;
  std::vector<std::pair<std::string, int>> stack{{"S", 0}};
  while (!stack.empty()) {
    auto [sym, depth] = stack.back();
    stack.pop_back();
    if (!Grammar::is_nonterminal(sym)) {
      out.push_back(sym);
      continue;
    }
    if (depth > 64) throw ConfigError("grammar recursion deeper than 64 at " + sym);
    const auto& alts = g.rules.at(sym);
    double total = 0.0;
    for (const auto& p : alts) total += p.weight;
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t k = 0;
    while (k + 1 < alts.size() && r >= alts[k].weight) r -= alts[k++].weight;
    const auto& rhs = alts[k].rhs;
    for (auto it = rhs.rbegin(); it != rhs.rend(); ++it) stack.emplace_back(*it, depth + 1);
  }
  std::string s;
  for (std::size_t i = 0; i < out.size(); ++i) s += (i ? " " : "") + out[i];
  if (s.empty()) throw ConfigError("grammar produced an empty sentence");
  return s;
}

/// Fixed per-token vectors shared by every domain (token identity -> frame mean).
struct TokenEmbeddings {
  Array table;  // |V| x dim

  static TokenEmbeddings make(const Vocab& v, std::size_t dim, std::uint64_t seed) {
    TokenEmbeddings e;
    e.table = Array::matrix(v.size(), dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : e.table.values()) x = n(rng);
    return e;
  }
  std::size_t dim() const { return table.cols(); }
};

/// T = U * frames_per_token frames; noise drawn from (spec.seed, utterance index).
inline Array synthesize_features(const TokenSeq& y, const DomainSpec& spec, const TokenEmbeddings& emb,
                                 std::uint64_t utt_index) {
  const std::size_t fpt = spec.frames_per_token, d = emb.dim();
  Array x = Array::matrix(y.size() * fpt, d);
  std::seed_seq ss{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 2u,
                   static_cast<std::uint32_t>(utt_index), static_cast<std::uint32_t>(utt_index >> 32)};
  std::mt19937_64 rng(ss);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t u = 0; u < y.size(); ++u) {
    const auto mean = emb.table.row(static_cast<std::size_t>(y[u]));
    for (std::size_t f = 0; f < fpt; ++f) {
      auto row = x.row(u * fpt + f);
      for (std::size_t k = 0; k < d; ++k) row[k] = mean[k] + (spec.noise_sigma > 0.0 ? spec.noise_sigma * n(rng) : 0.0);
    }
  }
  return x;
}

struct SplitRatios {
  double train = 0.8, dev = 0.1, test = 0.1;
};

struct Corpus {
  std::string domain;
  std::vector<Utterance> utterances;

  std::vector<Utterance> split(const std::string& name) const {
    std::vector<Utterance> out;
    for (const auto& u : utterances)
      if (u.split == name) out.push_back(u);
    return out;
  }
};

inline Corpus generate_domain(const DomainSpec& spec, std::size_t n_utts, const SplitRatios& ratios,
                              const Vocab& vocab, const TokenEmbeddings& emb) {
  spec.validate(vocab);
  if (n_utts < 1) throw ConfigError("generate_domain: n_utts must be >= 1");
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 || ratios.train + ratios.dev + ratios.test <= 0)
    throw ConfigError("generate_domain: split ratios must be >= 0 and not all zero");
  Corpus c;
  c.domain = spec.name;
  std::seed_seq ss{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 1u};
  std::mt19937_64 rng(ss);
  const double total = ratios.train + ratios.dev + ratios.test;
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n_utts) * ratios.train / total));
  const auto n_dev = std::min(n_utts - n_train,
                              static_cast<std::size_t>(std::llround(static_cast<double>(n_utts) * ratios.dev / total)));
  std::vector<std::size_t> order(n_utts);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> split_of(n_utts);
  for (std::size_t i = 0; i < n_utts; ++i)
    split_of[order[i]] = i < n_train ? "train" : (i < n_train + n_dev ? "dev" : "test");
  char id[64];
  for (std::size_t i = 0; i < n_utts; ++i) {
    Utterance u;
    std::snprintf(id, sizeof id, "%s-%05zu", spec.name.c_str(), i);
    u.id = id;
    u.text = sample_sentence(spec.grammar, rng);
    u.reference = tokenize(u.text, vocab);
    u.features = synthesize_features(u.reference, spec, emb, i);
    u.domain = spec.name;
    u.split = split_of[i];
    c.utterances.push_back(std::move(u));
  }
  return c;
}

/// Sentences only, for LM text (same grammar, independent stream).
inline std::vector<std::string> sample_text(const DomainSpec& spec, std::size_t n, std::uint64_t stream) {
  std::seed_seq ss{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 3u,
                   static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(ss);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_sentence(spec.grammar, rng));
  return out;
}

inline std::map<std::string, double> word_unigram(const std::vector<std::string>& sentences) {
  std::map<std::string, double> c;
  double n = 0;
  for (const auto& s : sentences) {
    std::istringstream is(s);
    for (std::string w; is >> w;) c[w] += 1.0, n += 1.0;
  }
  for (auto& [_, v] : c) v /= n;
  return c;
}

/// KL(p || q) over the union of words, both smoothed with eps mass per word.
inline double unigram_kl(const std::map<std::string, double>& p, const std::map<std::string, double>& q,
                         double eps = 1e-3) {
  std::set<std::string> words;
  for (const auto& [w, _] : p) words.insert(w);
  for (const auto& [w, _] : q) words.insert(w);
  const double n = static_cast<double>(words.size());
  auto get = [&](const std::map<std::string, double>& m, const std::string& w) {
    auto it = m.find(w);
    return ((it == m.end() ? 0.0 : it->second) + eps) / (1.0 + eps * n);
  };
  double kl = 0.0;
  for (const auto& w : words) {
    const double a = get(p, w), b = get(q, w);
    kl += a * std::log(a / b);
  }
  return kl;
}

/// Word n-grams (n >= 1) of `target` sentences that never occur in `source` sentences.
inline std::size_t unseen_word_ngrams(const std::vector<std::string>& target, const std::vector<std::string>& source,
                                      std::size_t n) {
  auto grams = [n](const std::vector<std::string>& ss) {
    std::set<std::vector<std::string>> out;
    for (const auto& s : ss) {
      std::istringstream is(s);
      std::vector<std::string> w;
      for (std::string x; is >> x;) w.push_back(x);
      for (std::size_t i = 0; i + n <= w.size(); ++i) out.emplace(w.begin() + static_cast<std::ptrdiff_t>(i), w.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
    return out;
  };
  const auto src = grams(source);
  std::size_t k = 0;
  for (const auto& g : grams(target)) k += src.count(g) == 0;
  return k;
}

// ---------------------------------------------------------------------------
// On disk: <stem>.tsv manifest (id, domain, split, text, features) and
// <stem>.feats, a container with one "features/<id>" entry per utterance.
// ---------------------------------------------------------------------------

inline const char* kCorpusHeader = "id\tdomain\tsplit\ttext\tfeatures";

inline void save_corpus(const std::string& stem, const std::vector<Utterance>& utts, const Vocab& v) {
  Container c;
  c.config_text = v.to_text();
  const std::string feats = stem + ".feats";
  std::ofstream m(stem + ".tsv");
  if (!m) throw std::runtime_error("cannot write " + stem + ".tsv");
  m << kCorpusHeader << "\n";
  const std::string base = feats.substr(feats.find_last_of('/') + 1);
  for (const auto& u : utts) {
    m << u.id << "\t" << u.domain << "\t" << u.split << "\t" << detokenize(u.reference, v) << "\t" << base << "\n";
    c.entries.add("features/" + u.id, u.features, Role::other);
  }
  write_container(feats, c);
}

inline std::vector<Utterance> load_corpus(const std::string& stem, const Vocab& v) {
  std::ifstream m(stem + ".tsv");
  if (!m) throw std::runtime_error("cannot open " + stem + ".tsv");
  const Container c = read_container(stem + ".feats");
  std::vector<Utterance> out;
  std::string line;
  std::getline(m, line);
  if (line != kCorpusHeader) throw FormatError("corpus manifest: bad header in " + stem + ".tsv");
  std::set<std::string> ids;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string part; std::getline(ss, part, '\t');) f.push_back(part);
    if (f.size() != 5) throw FormatError("corpus manifest: expected 5 columns in '" + line + "'");
    if (!ids.insert(f[0]).second) throw FormatError("corpus manifest: duplicate id " + f[0]);
    Utterance u;
    u.id = f[0];
    u.domain = f[1];
    u.split = f[2];
    u.text = f[3];
    u.reference = tokenize(f[3], v);
    u.features = c.entries.value("features/" + u.id);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace mwerlab
