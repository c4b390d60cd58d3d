#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mwerlab/autodiff.hpp"
#include "mwerlab/checkpoint.hpp"
#include "mwerlab/numcore.hpp"

using namespace mwerlab;

TEST(LogSumExp, MatchesNaiveOnModerateValues) {
  std::vector<double> x{0.1, -2.0, 1.5};
  double naive = std::log(std::exp(0.1) + std::exp(-2.0) + std::exp(1.5));
  EXPECT_NEAR(log_sum_exp(x), naive, 1e-14);
}

TEST(LogSumExp, LargeValuesDoNotOverflow) {
  std::vector<double> x{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(x), 1000.0 + std::log(2.0), 1e-12);
  std::vector<double> y{-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(y), -1000.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, AllNegInfIsNegInf) {
  std::vector<double> x{kNegInf, kNegInf};
  EXPECT_EQ(log_sum_exp(x), kNegInf);
  EXPECT_EQ(log_add(kNegInf, kNegInf), kNegInf);
  EXPECT_EQ(log_add(kNegInf, 2.0), 2.0);
}

TEST(Softmax, ClosedForm) {
  std::vector<double> s{0.0, std::log(3.0)};
  auto p = softmax(s);
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(ParamSet, DuplicateRejected) {
  ParamSet p;
  p.add("w", Array::vector({1.0}), Role::joint);
  EXPECT_THROW(p.add("w", Array::vector({2.0}), Role::joint), ContractError);
}

TEST(RelativeError, ZeroMapsCompareEqual) {
  ParamSet p;
  p.add("w", Array::vector({1.0, 2.0}), Role::joint);
  auto a = GradMap::zeros_like(p), b = GradMap::zeros_like(p);
  EXPECT_EQ(relative_error(a, b), 0.0);
  b.at("w")[0] = 1.0;
  EXPECT_EQ(relative_error(a, b), 1.0);
}

namespace {

ParamSet small_params(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.7);
  ParamSet p;
  Array W = Array::matrix(3, 4), b = Array::vector(std::vector<double>(3)), x = Array::vector(std::vector<double>(4));
  for (double& v : W.values()) v = n(rng);
  for (double& v : b.values()) v = n(rng);
  for (double& v : x.values()) v = n(rng);
  p.add("W", W, Role::joint);
  p.add("b", b, Role::joint);
  p.add("x", x, Role::encoder);
  return p;
}

}  // namespace

TEST(Autodiff, ComposedGraphMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    ParamSet p = small_params(rng);
    ad::Graph f = [](ad::Tape& t, const ad::Inputs& in) {
      auto h = ad::tanh(ad::affine(in.at("W"), in.at("x"), in.at("b")));
      auto s = ad::sigmoid(ad::matmul(in.at("W"), in.at("x")));
      auto ls = ad::log_softmax(ad::add(h, ad::mul(s, h)));
      auto sm = ad::softmax(ad::scale(h, 2.0));
      auto e = ad::log(ad::add_constant(ad::exp(ad::index(h, 1)), 1.0));
      auto mix = ad::log_add(ad::index(ls, 0), ad::sub(e, ad::index(sm, 2)));
      auto rows = ad::row(in.at("W"), 1);
      return ad::add(ad::add(mix, ad::dot(rows, in.at("x"))),
                     ad::log_sum_exp(ad::stack({ad::index(ls, 2), ad::scalar(t, 0.3)})));
    };
    auto vg = eval_with_grad(f, p);
    auto fd = finite_diff_grad(f, p);
    EXPECT_LT(relative_error(vg.grads, fd), 1e-7) << "trial " << trial;
    EXPECT_DOUBLE_EQ(vg.value, ad::evaluate(f, p));
  }
}

TEST(Autodiff, OverflowIsReportedWithOpName) {
  ParamSet p;
  p.add("x", Array::vector({800.0}), Role::other);
  ad::Graph f = [](ad::Tape&, const ad::Inputs& in) { return ad::sum(ad::exp(in.at("x"))); };
  try {
    ad::evaluate(f, p);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(3);
  Container c;
  c.config_text = "a=1\nb=two\n";
  c.entries = small_params(rng);
  const std::string bytes = serialize_container(c);
  Container d = deserialize_container(bytes);
  EXPECT_EQ(d.config_text, c.config_text);
  EXPECT_EQ(d.entries, c.entries);
  EXPECT_EQ(serialize_container(d), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
  std::mt19937_64 rng(4);
  Container c;
  c.config_text = "x=1\n";
  c.entries = small_params(rng);
  std::string bytes = serialize_container(c);
  EXPECT_THROW(deserialize_container(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_container(bytes + "z"), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_container(bad_magic), FormatError);
  std::string bad_digest = bytes;
  bad_digest[8] ^= 1;
  EXPECT_THROW(deserialize_container(bad_digest), FormatError);
}
