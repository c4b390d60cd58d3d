#pragma once

#include <random>
#include <string>
#include <vector>

#include "mwerlab/transducer.hpp"

namespace mwerlab::testing {

// Small model with |V| = 2 + letters.size() and tiny layers.
inline ModelConfig tiny_config(const std::string& letters = "ab", std::size_t layers = 1) {
  ModelConfig c;
  c.vocab = Vocab::characters(letters);
  c.feat_dim = 3;
  c.enc_hidden = std::vector<std::size_t>(layers, 3);
  c.joint_dim = 3;
  c.pred_embed = 2;
  c.pred_hidden = 3;
  return c;
}

inline Array random_features(std::size_t T, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Array x = Array::matrix(T, d);
  for (double& v : x.values()) v = n(rng);
  return x;
}

inline TokenSeq random_labels(std::size_t U, const Vocab& v, std::mt19937_64& rng) {
  const auto labels = v.labels();
  std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 1);
  TokenSeq y;
  for (std::size_t i = 0; i < U; ++i) y.ids.push_back(labels[pick(rng)]);
  return y;
}

inline Utterance utterance(std::string id, Array x, TokenSeq y) {
  Utterance u;
  u.id = std::move(id);
  u.features = std::move(x);
  u.reference = std::move(y);
  u.domain = "d";
  return u;
}

// Scales every parameter so the softmaxes are not near-uniform.
inline TransducerModel sharpened(TransducerModel m, double s) {
  for (auto& [name, e] : m.params.entries()) {
    (void)e;
    for (double& v : m.params.mutable_value(name).values()) v *= s;
  }
  return m;
}

}  // namespace mwerlab::testing
