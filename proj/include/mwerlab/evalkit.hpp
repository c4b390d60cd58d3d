#pragma once

// WER, word-count weighted averages, LM-weight sweeps and report tables.

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/decoder.hpp"
#include "mwerlab/mwer.hpp"
#include "mwerlab/training.hpp"

namespace mwerlab {

struct WerResult {
  double wer = 0.0;  // percent
  std::size_t words = 0;
  std::size_t errors = 0;
  std::vector<std::string> missing;  // ids without a hypothesis, scored as full deletions
};

/// 100 * sum word_errors / sum reference words over `refs`.
inline WerResult corpus_wer(const std::map<std::string, TokenSeq>& hyps, const std::vector<Utterance>& refs,
                            const Vocab& v) {
  WerResult r;
  for (const Utterance& u : refs) {
    r.words += word_count(u.reference, v);
    auto it = hyps.find(u.id);
    if (it == hyps.end()) {
      r.missing.push_back(u.id);
      r.errors += word_count(u.reference, v);
    } else {
      r.errors += word_errors(it->second, u.reference, v);
    }
  }
  if (r.words == 0) throw ContractError("corpus_wer: references contain no words");
  r.wer = 100.0 * static_cast<double>(r.errors) / static_cast<double>(r.words);
  return r;
}

struct SubsetRow {
  std::string subset;
  std::size_t words = 0;
  double wer = 0.0;
};

/// sum(words_i * wer_i) / sum(words_i).
inline double weighted_average(const std::vector<SubsetRow>& rows) {
  double num = 0.0, den = 0.0;
  for (const auto& r : rows) {
    if (r.words == 0) throw ContractError("weighted_average: subset '" + r.subset + "' has no words");
    num += static_cast<double>(r.words) * r.wer;
    den += static_cast<double>(r.words);
  }
  if (den == 0.0) throw ContractError("weighted_average: no rows");
  return num / den;
}

/// 100 * (a - b) / a.
inline double relative_reduction(double a, double b) {
  if (a == 0.0) return 0.0;
  return 100.0 * (a - b) / a;
}

/// Top-1 hypotheses for every utterance.
inline std::map<std::string, TokenSeq> decode_top1(const TransducerModel& m, const NGramLM* lm,
                                                   const std::vector<Utterance>& utts, const FusionConfig& cfg,
                                                   unsigned workers = 1, std::vector<NBestList>* nbest = nullptr) {
  std::vector<NBestList> lists(utts.size());
  parallel_for(utts.size(), workers, [&](std::size_t i) { lists[i] = beam_search(m, lm, utts[i].features, cfg, utts[i].id); });
  std::map<std::string, TokenSeq> out;
  for (const auto& l : lists) out[l.utterance_id] = l.hypotheses.front().tokens;
  if (nbest) *nbest = std::move(lists);
  return out;
}

/// Utterances grouped by domain, domains in first-seen order.
inline std::vector<std::pair<std::string, std::vector<Utterance>>> by_domain(const std::vector<Utterance>& utts) {
  std::vector<std::pair<std::string, std::vector<Utterance>>> out;
  for (const auto& u : utts) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == u.domain; });
    if (it == out.end()) out.emplace_back(u.domain, std::vector<Utterance>{u});
    else it->second.push_back(u);
  }
  return out;
}

struct GridPoint {
  double lambda_t = 0.0, lambda_s = 0.0;
  friend bool operator<(const GridPoint& a, const GridPoint& b) {
    return a.lambda_t != b.lambda_t ? a.lambda_t < b.lambda_t : a.lambda_s < b.lambda_s;
  }
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct SweepResult {
  std::vector<std::string> subsets;
  std::vector<std::size_t> words;                      // per subset
  std::map<GridPoint, std::vector<double>> surface;    // per grid point, WER per subset
  std::vector<GridPoint> argmin;                       // per subset
  std::vector<double> best_wer;                        // per subset

  double oracle_average() const {
    std::vector<SubsetRow> rows;
    for (std::size_t i = 0; i < subsets.size(); ++i) rows.push_back({subsets[i], words[i], best_wer[i]});
    return weighted_average(rows);
  }
  /// Weighted average when every subset uses the weights tuned on subset `k`.
  double transferred_average(std::size_t k) const {
    const auto& w = surface.at(argmin.at(k));
    std::vector<SubsetRow> rows;
    for (std::size_t i = 0; i < subsets.size(); ++i) rows.push_back({subsets[i], words[i], w[i]});
    return weighted_average(rows);
  }
};

/// Decodes every subset at every grid point. Ties in WER go to the smallest
/// (lambda_t, lambda_s) in lexicographic order.
inline SweepResult sweep_lm_weights(const TransducerModel& m, const NGramLM* lm, const std::vector<Utterance>& utts,
                                    std::vector<GridPoint> grid, FusionConfig base, unsigned workers = 1) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  SweepResult r;
  const auto groups = by_domain(utts);
  for (const auto& [name, us] : groups) {
    r.subsets.push_back(name);
    std::size_t w = 0;
    for (const auto& u : us) w += word_count(u.reference, m.vocab());
    r.words.push_back(w);
  }
  for (const GridPoint& g : grid) {
    FusionConfig cfg = base;
    cfg.lambda_t = g.lambda_t;
    cfg.lambda_s = g.lambda_s;
    const auto hyps = decode_top1(m, lm, utts, cfg, workers);
    std::vector<double> wers;
    for (const auto& [_, us] : groups) wers.push_back(corpus_wer(hyps, us, m.vocab()).wer);
    r.surface.emplace(g, std::move(wers));
  }
  for (std::size_t i = 0; i < r.subsets.size(); ++i) {
    GridPoint best = grid.front();
    double bw = r.surface.at(best)[i];
    for (const GridPoint& g : grid)
      if (r.surface.at(g)[i] < bw) best = g, bw = r.surface.at(g)[i];
    r.argmin.push_back(best);
    r.best_wer.push_back(bw);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reports: a titled table of string cells, printed as TSV or aligned text.
// ---------------------------------------------------------------------------

struct Table {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write_tsv(std::ostream& os) const {
    os << "# " << title << "\n";
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "\t" : "") << header[i];
    os << "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "\t" : "") << r[i];
      os << "\n";
    }
  }

  void write_text(std::ostream& os) const {
    std::vector<std::size_t> w(header.size(), 0);
    for (std::size_t i = 0; i < header.size(); ++i) w[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], r[i].size());
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string& c = cells[i];
        if (i == 0) os << c << std::string(w[i] - c.size(), ' ');
        else os << "  " << std::string(w[i] - c.size(), ' ') << c;
      }
      os << "\n";
    };
    os << title << "\n";
    line(header);
    std::size_t total = 0;
    for (std::size_t x : w) total += x + 2;
    os << std::string(total - 2, '-') << "\n";
    for (const auto& r : rows) line(r);
  }
};

inline std::string fmt(double x, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

struct EvalReport {
  std::vector<Table> tables;

  std::string tsv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < tables.size(); ++i) {
      if (i) os << "\n";
      tables[i].write_tsv(os);
    }
    return os.str();
  }
  std::string text() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < tables.size(); ++i) {
      if (i) os << "\n";
      tables[i].write_text(os);
    }
    return os.str();
  }
};

}  // namespace mwerlab
