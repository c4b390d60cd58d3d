#pragma once

// Desk-scale neural transducer.
//
//   encoder    f_t = P_enc · tanh(...tanh(W_0 x_t + b_0)...) + p_enc        (per frame)
//   predictor  s_u = tanh(W_in e(y_u) + W_rec s_{u-1} + b),  g_u = P_pred s_u
//              (y_0 is the start symbol, which reuses the blank's embedding row)
//   joint      log_softmax(W_out tanh(f_t + g_u + b_joint) + b_out)   over all |V| tokens
//
// The internal LM replaces f_t by the zero vector; its distribution lives on
// the same |V| slots with the blank slot read as end-of-sequence.
//
// Gradients are written out by hand (lattice occupancies plus backprop through
// the three sub-networks). transducer_graph.hpp rebuilds the same functions on
// the autodiff tape for cross-checking.

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/checkpoint.hpp"
#include "mwerlab/numcore.hpp"
#include "mwerlab/vocab.hpp"

namespace mwerlab {

struct ModelConfig {
  Vocab vocab = Vocab::lowercase();
  std::size_t feat_dim = 8;
  std::vector<std::size_t> enc_hidden{32};
  std::size_t joint_dim = 24;
  std::size_t pred_embed = 16;
  std::size_t pred_hidden = 32;

  void validate() const {
    if (feat_dim == 0 || joint_dim == 0 || pred_embed == 0 || pred_hidden == 0)
      throw ConfigError("model sizes must be positive");
    if (enc_hidden.empty() || enc_hidden.size() > 2)
      throw ConfigError("encoder must have 1 or 2 hidden layers");
    for (std::size_t h : enc_hidden)
      if (h == 0) throw ConfigError("encoder layer width must be positive");
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "feat_dim=" << feat_dim << "\nenc_hidden=";
    for (std::size_t i = 0; i < enc_hidden.size(); ++i) os << (i ? "," : "") << enc_hidden[i];
    os << "\njoint_dim=" << joint_dim << "\npred_embed=" << pred_embed
       << "\npred_hidden=" << pred_hidden << "\n"
       << vocab.to_text();
    return os.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig c;
    std::vector<std::string> toks;
    long blank = -1, sep = -1;
    std::istringstream is(text);
    std::string line;
    auto to_size = [](const std::string& key, const std::string& v) {
      try {
        return static_cast<std::size_t>(std::stoul(v));
      } catch (const std::exception&) {
        throw FormatError("model config: bad value for " + key);
      }
    };
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("model config: malformed line '" + line + "'");
      const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "feat_dim") c.feat_dim = to_size(k, v);
      else if (k == "joint_dim") c.joint_dim = to_size(k, v);
      else if (k == "pred_embed") c.pred_embed = to_size(k, v);
      else if (k == "pred_hidden") c.pred_hidden = to_size(k, v);
      else if (k == "enc_hidden") {
        c.enc_hidden.clear();
        std::istringstream ls(v);
        std::string part;
        while (std::getline(ls, part, ',')) c.enc_hidden.push_back(to_size(k, part));
      } else if (k == "vocab") {
        std::istringstream ls(v);
        std::string t;
        while (ls >> t) toks.push_back(t);
      } else if (k == "blank_id") blank = static_cast<long>(to_size(k, v));
      else if (k == "word_sep_id") sep = static_cast<long>(to_size(k, v));
      else throw FormatError("model config: unknown key '" + k + "'");
    }
    if (toks.empty() || blank < 0 || sep < 0) throw FormatError("model config: missing vocab");
    c.vocab = Vocab(std::move(toks), static_cast<TokenId>(blank), static_cast<TokenId>(sep));
    c.validate();
    return c;
  }
};

struct TransducerModel {
  ModelConfig config;
  ParamSet params;

  const Vocab& vocab() const { return config.vocab; }
};

/// One synthetic utterance.
struct Utterance {
  std::string id;
  Array features;  // T x d
  TokenSeq reference;
  std::string domain;
  std::string split = "train";
  std::string text;
};

namespace names {
inline std::string enc_w(std::size_t i) { return "encoder.layer" + std::to_string(i) + ".weight"; }
inline std::string enc_b(std::size_t i) { return "encoder.layer" + std::to_string(i) + ".bias"; }
inline const std::string enc_proj_w = "encoder.proj.weight";
inline const std::string enc_proj_b = "encoder.proj.bias";
inline const std::string embed = "predictor.embed";
inline const std::string rnn_in = "predictor.rnn.weight_in";
inline const std::string rnn_rec = "predictor.rnn.weight_rec";
inline const std::string rnn_b = "predictor.rnn.bias";
inline const std::string pred_proj_w = "predictor.proj.weight";
inline const std::string joint_b = "joint.bias";
inline const std::string out_w = "joint.out.weight";
inline const std::string out_b = "joint.out.bias";
}  // namespace names

/// Zero-bias, Xavier-uniform initialisation; embeddings uniform in [-1, 1].
inline TransducerModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](std::size_t rows, std::size_t cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Array w = Array::matrix(rows, cols);
    for (double& v : w.values()) v = u(rng);
    return w;
  };
  TransducerModel m{config, {}};
  const std::size_t V = config.vocab.size(), J = config.joint_dim;
  std::size_t in = config.feat_dim;
  for (std::size_t i = 0; i < config.enc_hidden.size(); ++i) {
    m.params.add(names::enc_w(i), xavier(config.enc_hidden[i], in), Role::encoder);
    m.params.add(names::enc_b(i), Array({config.enc_hidden[i]}), Role::encoder);
    in = config.enc_hidden[i];
  }
  m.params.add(names::enc_proj_w, xavier(J, in), Role::encoder);
  m.params.add(names::enc_proj_b, Array({J}), Role::encoder);
  {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Array e = Array::matrix(V, config.pred_embed);
    for (double& v : e.values()) v = u(rng);
    m.params.add(names::embed, std::move(e), Role::predictor);
  }
  m.params.add(names::rnn_in, xavier(config.pred_hidden, config.pred_embed), Role::predictor);
  m.params.add(names::rnn_rec, xavier(config.pred_hidden, config.pred_hidden), Role::predictor);
  m.params.add(names::rnn_b, Array({config.pred_hidden}), Role::predictor);
  m.params.add(names::pred_proj_w, xavier(J, config.pred_hidden), Role::predictor);
  m.params.add(names::joint_b, Array({J}), Role::joint);
  m.params.add(names::out_w, xavier(V, J), Role::joint);
  m.params.add(names::out_b, Array({V}), Role::joint);
  return m;
}

inline void check_model(const TransducerModel& m) {
  const TransducerModel ref = init_model(m.config, 0);
  if (ref.params.size() != m.params.size())
    throw ConfigError("model parameters do not match config");
  for (const auto& [name, e] : ref.params.entries()) {
    if (!m.params.contains(name)) throw ConfigError("model is missing parameter " + name);
    if (m.params.value(name).shape() != e.value.shape())
      throw ConfigError("shape mismatch for parameter " + name);
    if (m.params.role(name) != e.role) throw ConfigError("role mismatch for parameter " + name);
  }
}

inline void save_model(const std::string& path, const TransducerModel& m) {
  write_container(path, Container{m.config.to_text(), m.params});
}

inline TransducerModel load_model(const std::string& path) {
  Container c = read_container(path);
  TransducerModel m{ModelConfig::from_text(c.config_text), std::move(c.entries)};
  check_model(m);
  return m;
}

namespace detail {

struct Weights {
  std::vector<const Array*> enc_w, enc_b;
  const Array *enc_pw, *enc_pb, *embed, *w_in, *w_rec, *b_rec, *pred_pw, *joint_b, *out_w, *out_b;

  explicit Weights(const TransducerModel& m) {
    const ParamSet& p = m.params;
    for (std::size_t i = 0; i < m.config.enc_hidden.size(); ++i) {
      enc_w.push_back(&p.value(names::enc_w(i)));
      enc_b.push_back(&p.value(names::enc_b(i)));
    }
    enc_pw = &p.value(names::enc_proj_w);
    enc_pb = &p.value(names::enc_proj_b);
    embed = &p.value(names::embed);
    w_in = &p.value(names::rnn_in);
    w_rec = &p.value(names::rnn_rec);
    b_rec = &p.value(names::rnn_b);
    pred_pw = &p.value(names::pred_proj_w);
    joint_b = &p.value(names::joint_b);
    out_w = &p.value(names::out_w);
    out_b = &p.value(names::out_b);
  }
};

struct GradRefs {
  std::vector<Array*> enc_w, enc_b;
  Array *enc_pw, *enc_pb, *embed, *w_in, *w_rec, *b_rec, *pred_pw, *joint_b, *out_w, *out_b;

  GradRefs(const TransducerModel& m, GradMap& g) {
    for (std::size_t i = 0; i < m.config.enc_hidden.size(); ++i) {
      enc_w.push_back(&g.at(names::enc_w(i)));
      enc_b.push_back(&g.at(names::enc_b(i)));
    }
    enc_pw = &g.at(names::enc_proj_w);
    enc_pb = &g.at(names::enc_proj_b);
    embed = &g.at(names::embed);
    w_in = &g.at(names::rnn_in);
    w_rec = &g.at(names::rnn_rec);
    b_rec = &g.at(names::rnn_b);
    pred_pw = &g.at(names::pred_proj_w);
    joint_b = &g.at(names::joint_b);
    out_w = &g.at(names::out_w);
    out_b = &g.at(names::out_b);
  }
};

struct EncoderPass {
  const Array* input = nullptr;
  std::vector<Array> hidden;  // per layer, T x h_i (post-tanh)
  Array out;                  // T x J
};

inline EncoderPass encoder_forward(const TransducerModel& m, const Weights& w, const Array& x) {
  if (x.rank() != 2 || x.cols() != m.config.feat_dim)
    throw ConfigError("feature width " + std::to_string(x.cols()) + " does not match model feat_dim " +
                      std::to_string(m.config.feat_dim));
  EncoderPass p;
  p.input = &x;
  const std::size_t T = x.rows();
  const Array* in = &x;
  for (std::size_t l = 0; l < w.enc_w.size(); ++l) {
    Array h = Array::matrix(T, w.enc_w[l]->rows());
    for (std::size_t t = 0; t < T; ++t) {
      matvec(*w.enc_w[l], in->row(t), w.enc_b[l]->values(), h.row(t));
      for (double& v : h.row(t)) v = std::tanh(v);
    }
    p.hidden.push_back(std::move(h));
    in = &p.hidden.back();
  }
  p.out = Array::matrix(T, m.config.joint_dim);
  for (std::size_t t = 0; t < T; ++t) matvec(*w.enc_pw, in->row(t), w.enc_pb->values(), p.out.row(t));
  return p;
}

/// Adds the encoder-parameter gradient given d(objective)/d(f_t) for every frame.
inline void encoder_backward(const Weights& w, GradRefs& g, const EncoderPass& p, const Array& df) {
  const std::size_t T = df.rows();
  const std::size_t L = w.enc_w.size();
  std::vector<double> dh, da;
  for (std::size_t t = 0; t < T; ++t) {
    auto dft = df.row(t);
    const Array& last = p.hidden.back();
    outer_acc(dft, last.row(t), *g.enc_pw);
    axpy(1.0, dft, g.enc_pb->values());
    dh.assign(last.cols(), 0.0);
    matvec_transpose_acc(*w.enc_pw, dft, dh);
    for (std::size_t l = L; l-- > 0;) {
      auto h = p.hidden[l].row(t);
      da.resize(h.size());
      for (std::size_t i = 0; i < h.size(); ++i) da[i] = dh[i] * (1.0 - h[i] * h[i]);
      auto in = l == 0 ? p.input->row(t) : p.hidden[l - 1].row(t);
      outer_acc(da, in, *g.enc_w[l]);
      axpy(1.0, da, g.enc_b[l]->values());
      if (l > 0) {
        dh.assign(in.size(), 0.0);
        matvec_transpose_acc(*w.enc_w[l], da, dh);
      }
    }
  }
}

inline void rnn_step(const Weights& w, std::span<const double> prev, TokenId token,
                     std::span<double> out) {
  matvec(*w.w_in, w.embed->row(static_cast<std::size_t>(token)), w.b_rec->values(), out);
  if (!prev.empty()) {
    const Array& R = *w.w_rec;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double* ri = R.data() + i * R.cols();
      double s = 0.0;
      for (std::size_t j = 0; j < prev.size(); ++j) s += ri[j] * prev[j];
      out[i] += s;
    }
  }
  for (double& v : out) v = std::tanh(v);
}

struct PredictorPass {
  std::vector<TokenId> inputs;  // start symbol then y_1..y_U
  Array states;                 // (U+1) x S
  Array out;                    // (U+1) x J
};

inline PredictorPass predictor_forward(const TransducerModel& m, const Weights& w, const TokenSeq& y) {
  require_blank_free(y, m.vocab());
  PredictorPass p;
  const std::size_t U = y.size();
  p.inputs.push_back(m.vocab().blank_id());
  p.inputs.insert(p.inputs.end(), y.ids.begin(), y.ids.end());
  p.states = Array::matrix(U + 1, m.config.pred_hidden);
  p.out = Array::matrix(U + 1, m.config.joint_dim);
  for (std::size_t u = 0; u <= U; ++u) {
    std::span<const double> prev = u == 0 ? std::span<const double>{} : p.states.row(u - 1);
    rnn_step(w, prev, p.inputs[u], p.states.row(u));
    matvec(*w.pred_pw, p.states.row(u), {}, p.out.row(u));
  }
  return p;
}

/// Adds the predictor-parameter gradient given d(objective)/d(g_u) for every u.
inline void predictor_backward(const Weights& w, GradRefs& g, const PredictorPass& p, const Array& dg) {
  const std::size_t n = p.states.rows();
  const std::size_t S = p.states.cols();
  Array ds = Array::matrix(n, S);
  for (std::size_t u = 0; u < n; ++u) {
    outer_acc(dg.row(u), p.states.row(u), *g.pred_pw);
    matvec_transpose_acc(*w.pred_pw, dg.row(u), ds.row(u));
  }
  std::vector<double> da(S);
  for (std::size_t u = n; u-- > 0;) {
    auto s = p.states.row(u);
    auto dsu = ds.row(u);
    for (std::size_t i = 0; i < S; ++i) da[i] = dsu[i] * (1.0 - s[i] * s[i]);
    axpy(1.0, da, g.b_rec->values());
    const auto tok = static_cast<std::size_t>(p.inputs[u]);
    outer_acc(da, w.embed->row(tok), *g.w_in);
    matvec_transpose_acc(*w.w_in, da, g.embed->row(tok));
    if (u > 0) {
      outer_acc(da, p.states.row(u - 1), *g.w_rec);
      matvec_transpose_acc(*w.w_rec, da, ds.row(u - 1));
    }
  }
}

/// z = tanh(f + g + b_joint); lp = log_softmax(W_out z + b_out). f may be empty (zero vector).
inline void joint_forward(const Weights& w, std::span<const double> f, std::span<const double> g,
                          std::span<double> z, std::span<double> lp) {
  const auto bj = w.joint_b->values();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::tanh((f.empty() ? 0.0 : f[i]) + g[i] + bj[i]);
  matvec(*w.out_w, z, w.out_b->values(), lp);
  const double norm = log_sum_exp(lp);
  for (double& v : lp) v -= norm;
}

/// Given d(objective)/d(lp) for one joint evaluation, accumulates joint grads and
/// adds d/d(f + g) into `da_out`.
inline void joint_backward(const Weights& w, GradRefs& g, std::span<const double> z,
                           std::span<const double> lp, std::span<const double> dlp,
                           std::span<double> dlogits_buf, std::span<double> dz_buf,
                           std::span<double> da_out) {
  double total = 0.0;
  for (double v : dlp) total += v;
  for (std::size_t k = 0; k < lp.size(); ++k) dlogits_buf[k] = dlp[k] - std::exp(lp[k]) * total;
  outer_acc(dlogits_buf, z, *g.out_w);
  axpy(1.0, dlogits_buf, g.out_b->values());
  std::fill(dz_buf.begin(), dz_buf.end(), 0.0);
  matvec_transpose_acc(*w.out_w, dlogits_buf, dz_buf);
  for (std::size_t i = 0; i < z.size(); ++i) da_out[i] = dz_buf[i] * (1.0 - z[i] * z[i]);
  axpy(1.0, da_out, g.joint_b->values());
}

}  // namespace detail

/// Per-frame encoder states f_t, shape T x joint_dim.
inline Array encode(const TransducerModel& m, const Array& features) {
  detail::Weights w(m);
  return detail::encoder_forward(m, w, features).out;
}

/// Predictor states g_0..g_U, shape (U+1) x joint_dim. Row 0 is the start state.
inline Array predict(const TransducerModel& m, const TokenSeq& prefix) {
  detail::Weights w(m);
  return detail::predictor_forward(m, w, prefix).out;
}

/// Log distribution over all |V| tokens (blank included). An empty f means f = 0.
inline std::vector<double> joint(const TransducerModel& m, std::span<const double> f,
                                 std::span<const double> g) {
  detail::Weights w(m);
  const std::size_t J = m.config.joint_dim;
  if ((!f.empty() && f.size() != J) || g.size() != J) throw ConfigError("joint: vector size mismatch");
  std::vector<double> z(J), lp(m.vocab().size());
  detail::joint_forward(w, f, g, z, lp);
  return lp;
}

/// (T) x (U+1) alignment lattice. Blank at (t,u) moves to (t+1,u); label y_{u+1}
/// moves to (t,u+1); termination is blank out of (T-1,U).
struct JointLattice {
  std::size_t T = 0, U = 0, V = 0;
  Array log_probs;  // T x (U+1) x V
  Array alpha;      // T x (U+1)
  Array beta;       // T x (U+1)
  double log_posterior = 0.0;

  double lp(std::size_t t, std::size_t u, std::size_t k) const { return log_probs[(t * (U + 1) + u) * V + k]; }
  double a(std::size_t t, std::size_t u) const { return alpha[t * (U + 1) + u]; }
  double b(std::size_t t, std::size_t u) const { return beta[t * (U + 1) + u]; }
};

namespace detail {

struct LatticePass {
  JointLattice lattice;
  Array z;  // T x (U+1) x J joint hidden activations
};

inline LatticePass lattice_forward(const TransducerModel& m, const Weights& w, const EncoderPass& enc,
                                   const PredictorPass& pred, const TokenSeq& y) {
  const std::size_t T = enc.out.rows(), U = y.size(), V = m.vocab().size(), J = m.config.joint_dim;
  if (T == 0) throw ContractError("lattice needs T >= 1");
  LatticePass p;
  JointLattice& L = p.lattice;
  L.T = T;
  L.U = U;
  L.V = V;
  L.log_probs = Array({T, U + 1, V});
  L.alpha = Array::matrix(T, U + 1, kNegInf);
  L.beta = Array::matrix(T, U + 1, kNegInf);
  p.z = Array({T, U + 1, J});
  double* lpd = L.log_probs.data();
  double* zd = p.z.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      const std::size_t c = t * (U + 1) + u;
      joint_forward(w, enc.out.row(t), pred.out.row(u), std::span<double>(zd + c * J, J),
                    std::span<double>(lpd + c * V, V));
    }
  const auto blank = static_cast<std::size_t>(m.vocab().blank_id());
  auto label = [&](std::size_t u) { return static_cast<std::size_t>(y.ids[u]); };
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      double v;
      if (t == 0 && u == 0) v = 0.0;
      else {
        v = kNegInf;
        if (t > 0) v = L.a(t - 1, u) + L.lp(t - 1, u, blank);
        if (u > 0) v = log_add(v, L.a(t, u - 1) + L.lp(t, u - 1, label(u - 1)));
      }
      L.alpha[t * (U + 1) + u] = v;
    }
  for (std::size_t t = T; t-- > 0;)
    for (std::size_t u = U + 1; u-- > 0;) {
      double v;
      if (t == T - 1 && u == U) v = L.lp(t, u, blank);
      else {
        v = kNegInf;
        if (t + 1 < T) v = L.b(t + 1, u) + L.lp(t, u, blank);
        if (u < U) v = log_add(v, L.b(t, u + 1) + L.lp(t, u, label(u)));
      }
      L.beta[t * (U + 1) + u] = v;
    }
  L.log_posterior = L.a(T - 1, U) + L.lp(T - 1, U, blank);
  if (!std::isfinite(L.log_posterior)) throw NumericError("numeric overflow in transducer lattice");
  return p;
}

/// Adds scale * d(-log P(y|x))/d(params) for joint and predictor, and
/// scale * d(-log P)/d(f_t) into df (the caller runs encoder_backward).
inline void lattice_backward(const TransducerModel& m, const Weights& w, GradRefs& g,
                             const LatticePass& p, const PredictorPass& pred, const TokenSeq& y,
                             double scale, Array& df) {
  const JointLattice& L = p.lattice;
  const std::size_t T = L.T, U = L.U, V = L.V, J = m.config.joint_dim;
  const auto blank = static_cast<std::size_t>(m.vocab().blank_id());
  const double logp = L.log_posterior;
  Array dg = Array::matrix(U + 1, J);
  std::vector<double> dlp(V, 0.0), dlogits(V), dz(J), da(J);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      const double a = L.a(t, u);
      if (a == kNegInf) continue;
      const double next_blank = (t + 1 < T) ? L.b(t + 1, u) : (u == U ? 0.0 : kNegInf);
      const double gb = -scale * std::exp(a + L.lp(t, u, blank) + next_blank - logp);
      double gl = 0.0;
      std::size_t lab = 0;
      if (u < U) {
        lab = static_cast<std::size_t>(y.ids[u]);
        gl = -scale * std::exp(a + L.lp(t, u, lab) + L.b(t, u + 1) - logp);
      }
      if (gb == 0.0 && gl == 0.0) continue;
      std::fill(dlp.begin(), dlp.end(), 0.0);
      dlp[blank] += gb;
      if (u < U) dlp[lab] += gl;
      const std::size_t c = t * (U + 1) + u;
      joint_backward(w, g, std::span<const double>(p.z.data() + c * J, J),
                     std::span<const double>(L.log_probs.data() + c * V, V), dlp, dlogits, dz, da);
      axpy(1.0, da, df.row(t));
      axpy(1.0, da, dg.row(u));
    }
  predictor_backward(w, g, pred, dg);
}

struct IlmPass {
  PredictorPass pred;
  Array z;   // (U+1) x J
  Array lp;  // (U+1) x V
  double log_prob = 0.0;
};

inline IlmPass ilm_forward(const TransducerModel& m, const Weights& w, const TokenSeq& y) {
  IlmPass p;
  p.pred = predictor_forward(m, w, y);
  const std::size_t U = y.size(), J = m.config.joint_dim, V = m.vocab().size();
  p.z = Array::matrix(U + 1, J);
  p.lp = Array::matrix(U + 1, V);
  const auto eos = static_cast<std::size_t>(m.vocab().blank_id());
  for (std::size_t u = 0; u <= U; ++u) {
    joint_forward(w, {}, p.pred.out.row(u), p.z.row(u), p.lp.row(u));
    const std::size_t target = u < U ? static_cast<std::size_t>(y.ids[u]) : eos;
    p.log_prob += p.lp.at(u, target);
  }
  return p;
}

/// Adds scale * d(-log P_ilm(y))/d(params). Encoder entries are untouched.
inline void ilm_backward(const TransducerModel& m, const Weights& w, GradRefs& g, const IlmPass& p,
                         const TokenSeq& y, double scale) {
  const std::size_t U = y.size(), J = m.config.joint_dim, V = m.vocab().size();
  const auto eos = static_cast<std::size_t>(m.vocab().blank_id());
  Array dg = Array::matrix(U + 1, J);
  std::vector<double> dlp(V), dlogits(V), dz(J);
  for (std::size_t u = 0; u <= U; ++u) {
    std::fill(dlp.begin(), dlp.end(), 0.0);
    dlp[u < U ? static_cast<std::size_t>(y.ids[u]) : eos] = -scale;
    joint_backward(w, g, p.z.row(u), p.lp.row(u), dlp, dlogits, dz, dg.row(u));
  }
  predictor_backward(w, g, p.pred, dg);
}

}  // namespace detail

struct TransducerLossResult {
  double loss = 0.0;
  GradMap grads;
  JointLattice lattice;
};

/// -log P(y|x) summed over all alignments, its gradient, and the lattice.
inline TransducerLossResult transducer_loss(const TransducerModel& m, const Array& features,
                                            const TokenSeq& y) {
  detail::Weights w(m);
  auto enc = detail::encoder_forward(m, w, features);
  auto pred = detail::predictor_forward(m, w, y);
  auto lat = detail::lattice_forward(m, w, enc, pred, y);
  TransducerLossResult r;
  r.grads = GradMap::zeros_like(m.params);
  detail::GradRefs g(m, r.grads);
  Array df = Array::matrix(enc.out.rows(), m.config.joint_dim);
  detail::lattice_backward(m, w, g, lat, pred, y, 1.0, df);
  detail::encoder_backward(w, g, enc, df);
  r.loss = -lat.lattice.log_posterior;
  r.lattice = std::move(lat.lattice);
  return r;
}

inline TransducerLossResult transducer_loss(const TransducerModel& m, const Utterance& utt) {
  return transducer_loss(m, utt.features, utt.reference);
}

/// Forward-only: log P(y|x) over all alignments.
inline double seq_log_posterior(const TransducerModel& m, const Array& features, const TokenSeq& y) {
  detail::Weights w(m);
  auto enc = detail::encoder_forward(m, w, features);
  auto pred = detail::predictor_forward(m, w, y);
  return detail::lattice_forward(m, w, enc, pred, y).lattice.log_posterior;
}

/// Lattice only (forward and backward variables), no gradient.
inline JointLattice build_lattice(const TransducerModel& m, const Array& features, const TokenSeq& y) {
  detail::Weights w(m);
  auto enc = detail::encoder_forward(m, w, features);
  auto pred = detail::predictor_forward(m, w, y);
  return detail::lattice_forward(m, w, enc, pred, y).lattice;
}

/// Internal-LM log-probability: sum over u of log P(y_u | y_<u), then end-of-sequence,
/// each step scored by the joint network with a zero encoder vector.
inline double ilm_log_prob(const TransducerModel& m, const TokenSeq& y) {
  detail::Weights w(m);
  return detail::ilm_forward(m, w, y).log_prob;
}

/// Internal-LM step distribution after a given prefix (blank slot = end-of-sequence).
inline std::vector<double> ilm_step(const TransducerModel& m, const TokenSeq& prefix) {
  const Array g = predict(m, prefix);
  return joint(m, {}, g.row(g.rows() - 1));
}

struct IlmLossResult {
  double loss = 0.0;
  GradMap grads;
};

/// -ilm_log_prob and its gradient; encoder-tagged entries are exactly zero.
inline IlmLossResult ilm_loss(const TransducerModel& m, const TokenSeq& y) {
  detail::Weights w(m);
  auto p = detail::ilm_forward(m, w, y);
  IlmLossResult r;
  r.grads = GradMap::zeros_like(m.params);
  detail::GradRefs g(m, r.grads);
  detail::ilm_backward(m, w, g, p, y, 1.0);
  r.loss = -p.log_prob;
  return r;
}

}  // namespace mwerlab
