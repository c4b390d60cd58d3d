#pragma once

// Add-k smoothed n-gram LM with backoff to shorter contexts.
//
// Outcomes are the non-blank tokens plus end-of-sequence; EOS occupies the
// blank's slot in every distribution this module returns, so a step
// distribution is a |V|-vector aligned with the transducer's output layer.
//
// For a context h seen in training with count c(h):
//   P(w|h) = (c(h,w) + k) / (c(h) + k V')         if c(h,w) > 0
//   P(w|h) = alpha(h) P(w|h')                      otherwise
// where h' drops the oldest token and alpha(h) hands the add-k mass reserved
// for unseen outcomes to the lower order. The empty context is plain add-k
// over all V' outcomes. Unseen contexts back off with weight 1.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/numcore.hpp"
#include "mwerlab/vocab.hpp"

namespace mwerlab {

class NGramLM {
 public:
  static constexpr TokenId kSos = -1;
  using Context = std::vector<TokenId>;  // oldest first; may start with kSos

  NGramLM() = default;

  int order() const { return order_; }
  double k() const { return k_; }
  const std::string& domain_label() const { return domain_label_; }
  const Vocab& vocab() const { return vocab_; }
  TokenId eos_id() const { return vocab_.blank_id(); }

  /// log P over the |V| slots after `prefix` (blank slot = EOS).
  const std::vector<double>& step(const TokenSeq& prefix) const {
    Context h;
    const std::size_t want = static_cast<std::size_t>(order_ - 1);
    if (want > 0) {
      const std::size_t n = prefix.size();
      if (n < want) {
        h.push_back(kSos);
        h.insert(h.end(), prefix.ids.begin(), prefix.ids.end());
      } else {
        h.assign(prefix.ids.end() - static_cast<std::ptrdiff_t>(want), prefix.ids.end());
      }
    }
    return distribution_for(h);
  }

  /// Distribution for an explicit context (oldest first), backing off as needed.
  const std::vector<double>& distribution_for(Context h) const {
    while (true) {
      auto it = dists_.find(h);
      if (it != dists_.end()) return it->second;
      h.erase(h.begin());
    }
  }

  /// Stored (context, token) log-probabilities, i.e. outcomes seen after the context.
  const std::map<std::pair<Context, TokenId>, double>& records() const { return log_probs_; }
  /// Log backoff weight per stored context.
  const std::map<Context, double>& backoff_weights() const { return backoff_; }
  /// Every stored context with its full step distribution.
  const std::map<Context, std::vector<double>>& distributions() const { return dists_; }

  friend NGramLM train_ngram(const std::vector<TokenSeq>&, const Vocab&, int, double, const std::string&);
  friend NGramLM read_lm(std::istream&);

 private:
  // Fills dists_ from log_probs_ and backoff_, shortest contexts first.
  void build_distributions() {
    dists_.clear();
    std::vector<std::vector<Context>> by_len(static_cast<std::size_t>(order_));
    for (const auto& [h, _] : backoff_) by_len.at(h.size()).push_back(h);
    const std::size_t V = vocab_.size();
    for (const auto& level : by_len)
      for (const Context& h : level) {
        std::vector<double> d(V, kNegInf);
        if (!h.empty()) {
          const Context lower(h.begin() + 1, h.end());
          const auto& ld = dists_.at(lower);
          const double bo = backoff_.at(h);
          for (std::size_t w = 0; w < V; ++w) d[w] = bo + ld[w];
        }
        for (auto it = log_probs_.lower_bound({h, std::numeric_limits<TokenId>::min()});
             it != log_probs_.end() && it->first.first == h; ++it)
          d[static_cast<std::size_t>(it->first.second)] = it->second;
        dists_.emplace(h, std::move(d));
      }
  }

  int order_ = 1;
  double k_ = 0.1;
  std::string domain_label_;
  Vocab vocab_;
  std::map<std::pair<Context, TokenId>, double> log_probs_;
  std::map<Context, double> backoff_;
  std::map<Context, std::vector<double>> dists_;
};

inline NGramLM train_ngram(const std::vector<TokenSeq>& corpus, const Vocab& vocab, int order,
                           double k = 0.1, const std::string& domain_label = "") {
  if (corpus.empty()) throw ConfigError("train_ngram: empty corpus");
  if (order < 1 || order > 4) throw ConfigError("train_ngram: order must be in 1..4");
  if (!(k > 0.0)) throw ConfigError("train_ngram: k must be positive");
  using Context = NGramLM::Context;
  const TokenId eos = vocab.blank_id();
  std::map<Context, std::map<TokenId, double>> counts;
  for (const TokenSeq& y : corpus) {
    require_blank_free(y, vocab);
    std::vector<TokenId> w{NGramLM::kSos};
    w.insert(w.end(), y.ids.begin(), y.ids.end());
    w.push_back(eos);
    for (std::size_t i = 1; i < w.size(); ++i)
      for (std::size_t n = 0; n < static_cast<std::size_t>(order) && n <= i; ++n) {
        const Context h(w.begin() + static_cast<std::ptrdiff_t>(i - n), w.begin() + static_cast<std::ptrdiff_t>(i));
        counts[h][w[i]] += 1.0;
      }
  }
  NGramLM lm;
  lm.order_ = order;
  lm.k_ = k;
  lm.domain_label_ = domain_label;
  lm.vocab_ = vocab;
  const double Vp = static_cast<double>(vocab.size());  // labels plus EOS
  const std::size_t V = vocab.size();

  // Contexts by increasing length, so the lower order is ready when needed.
  std::vector<std::vector<const std::pair<const Context, std::map<TokenId, double>>*>> by_len(
      static_cast<std::size_t>(order));
  for (const auto& kv : counts) by_len.at(kv.first.size()).push_back(&kv);

  std::map<Context, std::vector<double>> prob;  // linear-domain full distributions
  for (const auto& level : by_len)
    for (const auto* kv : level) {
      const Context& h = kv->first;
      double total = 0.0;
      for (const auto& [_, c] : kv->second) total += c;
      const double denom = total + k * Vp;
      std::vector<double> p(V, 0.0);
      if (h.empty()) {
        for (std::size_t w = 0; w < V; ++w) {
          auto it = kv->second.find(static_cast<TokenId>(w));
          p[w] = ((it == kv->second.end() ? 0.0 : it->second) + k) / denom;
        }
        for (std::size_t w = 0; w < V; ++w) lm.log_probs_[{h, static_cast<TokenId>(w)}] = std::log(p[w]);
        lm.backoff_[h] = 0.0;
      } else {
        const auto& lower = prob.at(Context(h.begin() + 1, h.end()));
        double seen_mass = 0.0, lower_seen = 0.0;
        for (const auto& [w, c] : kv->second) {
          p[static_cast<std::size_t>(w)] = (c + k) / denom;
          seen_mass += p[static_cast<std::size_t>(w)];
          lower_seen += lower[static_cast<std::size_t>(w)];
          lm.log_probs_[{h, w}] = std::log(p[static_cast<std::size_t>(w)]);
        }
        const double leftover = 1.0 - seen_mass;
        const double lower_left = 1.0 - lower_seen;
        const bool all_seen = kv->second.size() == V;
        const double alpha = (all_seen || !(lower_left > 0.0)) ? 1.0 : leftover / lower_left;
        for (std::size_t w = 0; w < V; ++w)
          if (kv->second.count(static_cast<TokenId>(w)) == 0) p[w] = alpha * lower[w];
        lm.backoff_[h] = std::log(alpha);
      }
      prob.emplace(h, std::move(p));
    }
  lm.build_distributions();
  return lm;
}

/// log P(EOS | SOS) for the empty sequence; otherwise the chain-rule sum plus EOS.
inline double lm_log_prob(const NGramLM& lm, const TokenSeq& y) {
  require_blank_free(y, lm.vocab());
  double s = 0.0;
  TokenSeq prefix;
  for (TokenId id : y.ids) {
    s += lm.step(prefix)[static_cast<std::size_t>(id)];
    prefix.ids.push_back(id);
  }
  return s + lm.step(prefix)[static_cast<std::size_t>(lm.eos_id())];
}

inline const std::vector<double>& lm_step(const NGramLM& lm, const TokenSeq& prefix) {
  require_blank_free(prefix, lm.vocab());
  return lm.step(prefix);
}

// ---------------------------------------------------------------------------
// text format
//
//   # comment lines
//   order=<n>
//   smoothing=add-k
//   k=<k>
//   domain_label=<label>
//   vocab=<tok> <tok> ...          (same line format as the model config)
//   blank_id=<id>
//   word_sep_id=<id>
//   \data\   (literal marker line)
//   ngram\t<context>\t<token>\t<natural-log prob>
//   backoff\t<context>\t<natural-log weight>
//
// <context> is "-" for the empty context, otherwise space-separated tokens,
// oldest first, with "<s>" for the start symbol. "</s>" names end-of-sequence.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string lm_token(const Vocab& v, TokenId id) {
  if (id == NGramLM::kSos) return "<s>";
  if (id == v.blank_id()) return "</s>";
  return v.token(id);
}
inline TokenId lm_token_id(const Vocab& v, const std::string& s) {
  if (s == "<s>") return NGramLM::kSos;
  if (s == "</s>") return v.blank_id();
  return v.id(s);
}
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
}  // namespace detail

inline void write_lm(std::ostream& os, const NGramLM& lm) {
  const Vocab& v = lm.vocab();
  os << "# mwerlab n-gram LM\n"
     << "order=" << lm.order() << "\nsmoothing=add-k\nk=" << detail::format_double(lm.k())
     << "\ndomain_label=" << lm.domain_label() << "\n"
     << v.to_text() << "\\data\\\n";
  auto ctx = [&v](const NGramLM::Context& h) {
    if (h.empty()) return std::string("-");
    std::string s;
    for (std::size_t i = 0; i < h.size(); ++i) s += (i ? " " : "") + detail::lm_token(v, h[i]);
    return s;
  };
  for (const auto& [key, lp] : lm.records())
    os << "ngram\t" << ctx(key.first) << "\t" << detail::lm_token(v, key.second) << "\t"
       << detail::format_double(lp) << "\n";
  for (const auto& [h, bo] : lm.backoff_weights())
    os << "backoff\t" << ctx(h) << "\t" << detail::format_double(bo) << "\n";
}

inline NGramLM read_lm(std::istream& is) {
  NGramLM lm;
  std::string line;
  std::vector<std::string> toks;
  long blank = -1, sep = -1;
  bool in_data = false;
  auto split_tab = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string part;
    while (std::getline(ss, part, '\t')) out.push_back(part);
    return out;
  };
  auto parse_ctx = [&lm](const std::string& s) {
    NGramLM::Context h;
    if (s == "-") return h;
    std::istringstream ss(s);
    std::string t;
    while (ss >> t) h.push_back(detail::lm_token_id(lm.vocab_, t));
    return h;
  };
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!in_data) {
      if (line == "\\data\\") {
        if (toks.empty() || blank < 0 || sep < 0) throw FormatError("lm: missing vocab header");
        lm.vocab_ = Vocab(toks, static_cast<TokenId>(blank), static_cast<TokenId>(sep));
        in_data = true;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("lm: malformed header line '" + line + "'");
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "order") lm.order_ = std::stoi(val);
      else if (key == "smoothing") {
        if (val != "add-k") throw FormatError("lm: unsupported smoothing '" + val + "'");
      } else if (key == "k") lm.k_ = std::stod(val);
      else if (key == "domain_label") lm.domain_label_ = val;
      else if (key == "vocab") {
        std::istringstream ss(val);
        std::string t;
        while (ss >> t) toks.push_back(t);
      } else if (key == "blank_id") blank = std::stol(val);
      else if (key == "word_sep_id") sep = std::stol(val);
      else throw FormatError("lm: unknown header key '" + key + "'");
      continue;
    }
    const auto f = split_tab(line);
    if (f.size() == 4 && f[0] == "ngram") {
      lm.log_probs_[{parse_ctx(f[1]), detail::lm_token_id(lm.vocab_, f[2])}] = std::stod(f[3]);
    } else if (f.size() == 3 && f[0] == "backoff") {
      lm.backoff_[parse_ctx(f[1])] = std::stod(f[2]);
    } else {
      throw FormatError("lm: malformed record '" + line + "'");
    }
  }
  if (!in_data) throw FormatError("lm: missing \\data\\ section");
  if (lm.order_ < 1 || lm.order_ > 4) throw FormatError("lm: bad order");
  if (lm.backoff_.count({}) == 0) throw FormatError("lm: missing unigram context");
  lm.build_distributions();
  return lm;
}

inline void save_lm(const std::string& path, const NGramLM& lm) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  write_lm(f, lm);
}

inline NGramLM load_lm(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path);
  return read_lm(f);
}

}  // namespace mwerlab
