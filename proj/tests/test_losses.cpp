#include <gtest/gtest.h>

#include <cmath>

#include "bcl/losses.hpp"
#include "bcl/model.hpp"
#include "oracles/reference_oracles.hpp"

using namespace bcl;

namespace {

struct Instance {
  Vec anchor;
  std::vector<Vec> cands;
  std::vector<std::size_t> pos;
  std::vector<double> w;
  double tau;

  ContrastiveView view() const {
    ContrastiveView v;
    for (const Vec& c : cands) v.candidates.emplace_back(c);
    v.positives = pos;
    v.weights = w;
    return v;
  }
  oracle::ContrastiveInstance as_oracle() const { return {anchor, cands, pos, w, tau}; }
};

Instance random_instance(Rng& rng, bool unit) {
  Instance in;
  const std::size_t d = 2 + rng.index(6);
  const std::size_t n = 2 + rng.index(9);
  in.tau = rng.uniform(0.2, 2.0);
  in.anchor.resize(d);
  for (double& v : in.anchor) v = rng.normal();
  if (unit) in.anchor = l2_normalize(in.anchor);
  for (std::size_t a = 0; a < n; ++a) {
    Vec c(d);
    for (double& v : c) v = rng.normal();
    in.cands.push_back(unit ? l2_normalize(c) : c);
  }
  std::vector<std::size_t> all(n);
  for (std::size_t a = 0; a < n; ++a) all[a] = a;
  in.pos = rng.sample(all, 1 + rng.index(n));
  std::sort(in.pos.begin(), in.pos.end());
  for (std::size_t k = 0; k < in.pos.size(); ++k) in.w.push_back(rng.uniform());
  return in;
}

double max_rel(const Vec& a, const Vec& b) {
  double scale = 0.0, worst = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst / std::max(1.0, scale);
}

}  // namespace

TEST(ConsensusWeight, Examples) {
  EXPECT_DOUBLE_EQ(consensus_weight(Vec{0.6, 0.8}, Vec{0.6, 0.8}), 1.0);
  EXPECT_DOUBLE_EQ(consensus_weight(Vec{1, 0}, Vec{0, 3}), 0.5);
  EXPECT_NEAR(consensus_weight(Vec{1, 1}, Vec{-2, -2}), 0.0, 1e-15);
  EXPECT_THROW(consensus_weight(Vec{0, 0}, Vec{1, 0}), Error);
}

TEST(ConsensusWeight, AlwaysInUnitInterval) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    Vec a(4), b(4);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const double w = consensus_weight(a, b);
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
}

TEST(AffinityScores, Examples) {
  const Vec a{1, 0};
  const Vec c1{1, 0}, c2{0, 1}, c3{0, -1};
  std::vector<VecView> eq{c2, c3};
  const Vec s_eq = affinity_scores(Vec{1, 0}, eq, 1.0);
  EXPECT_DOUBLE_EQ(s_eq[0], 0.5);
  std::vector<VecView> two{c1, c2};
  const Vec s = affinity_scores(a, two, 1.0);
  EXPECT_NEAR(s[0], 0.73106, 1e-4);
  EXPECT_NEAR(s[1], 0.26894, 1e-4);
  std::vector<VecView> one{c2};
  EXPECT_DOUBLE_EQ(affinity_scores(a, one, 0.5)[0], 1.0);
  try {
    affinity_scores(a, std::vector<VecView>{}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_set);
  }
}

TEST(LossL1, Examples) {
  const Vec p{1, 0}, n{0, 1};
  ContrastiveView single{{p}, {0}, {1.0}};
  EXPECT_NEAR(loss_l1(Vec{0.3, 0.4}, single, 1.0).value, 0.0, 1e-15);

  ContrastiveView zero_w{{p, n}, {0, 1}, {0.0, 0.0}};
  const LossWithGrad z = loss_l1(Vec{0.3, 0.4}, zero_w, 1.0);
  EXPECT_EQ(z.value, 0.0);
  for (double g : z.grad) EXPECT_EQ(g, 0.0);

  ContrastiveView two{{p, n}, {0}, {1.0}};
  EXPECT_NEAR(loss_l1(Vec{1, 0}, two, 1.0).value, 0.31326, 1e-4);
}

TEST(LossL1, EmptyPositivesAreSkipped) {
  const Vec n{0, 1};
  ContrastiveView v{{n}, {}, {}};
  const LossWithGrad r = loss_l1(Vec{1, 0}, v, 1.0);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.value, 0.0);
}

TEST(LossL1, ParameterErrors) {
  const Vec p{1, 0};
  ContrastiveView v{{p}, {0}, {1.0}};
  for (double tau : {0.0, -1.0}) {
    try {
      loss_l1(Vec{1, 0}, v, tau);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
  }
  ContrastiveView bad{{p}, {0}, {1.5}};
  EXPECT_THROW(loss_l1(Vec{1, 0}, bad, 1.0), Error);
}

TEST(LossL1, AgreesWithOracle) {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const Instance in = random_instance(rng, true);
    const LossWithGrad r = loss_l1(in.anchor, in.view(), in.tau);
    EXPECT_NEAR(r.value, oracle::oracle_l1(in.as_oracle()).value, 1e-9);
    const Vec og = oracle::oracle_l1_grad(in.as_oracle());
    for (std::size_t i = 0; i < og.size(); ++i) EXPECT_NEAR(r.grad[i], og[i], 1e-9);
  }
}

TEST(LossL1, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int t = 0; t < 60; ++t) {
    const Instance in = random_instance(rng, false);
    const ContrastiveView v = in.view();
    const Vec fd = finite_diff_grad([&](VecView x) { return loss_l1(x, v, in.tau).value; }, in.anchor);
    EXPECT_LT(max_rel(loss_l1(in.anchor, v, in.tau).grad, fd), 1e-4);
  }
}

TEST(LossL1, ReducesToSinglePositiveContrastive) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    Instance in = random_instance(rng, true);
    in.pos = {rng.index(in.cands.size())};
    in.w = {1.0};
    double denom = 0.0;
    for (const Vec& c : in.cands) denom += std::exp(dot(in.anchor, c) / in.tau);
    const double direct = -std::log(std::exp(dot(in.anchor, in.cands[in.pos[0]]) / in.tau) / denom);
    EXPECT_NEAR(loss_l1(in.anchor, in.view(), in.tau).value, direct, 1e-12);
  }
}

TEST(LossL1, MonotoneInPositiveAffinity) {
  // Moving the anchor toward the positive raises s_p on 3-candidate instances; loss must not increase.
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    Vec p(2), a(2), b(2), anchor(2);
    for (Vec* v : {&p, &a, &b, &anchor})
      for (double& x : *v) x = rng.normal();
    ContrastiveView v{{p, a, b}, {0}, {rng.uniform()}};
    const std::vector<VecView> cands{p, a, b};
    const double s0 = affinity_scores(anchor, cands, 1.0)[0];
    const double l0 = loss_l1(anchor, v, 1.0).value;
    Vec moved = anchor;
    for (std::size_t i = 0; i < 2; ++i) moved[i] += 0.05 * p[i];
    const double s1 = affinity_scores(moved, cands, 1.0)[0];
    const double l1 = loss_l1(moved, v, 1.0).value;
    if (s1 >= s0)
      EXPECT_LE(l1, l0 + 1e-12);
    else
      EXPECT_GE(l1, l0 - 1e-12);
  }
}

TEST(LossL1, NonNegativeAndFinite) {
  Rng rng(14);
  for (int t = 0; t < 300; ++t) {
    const Instance in = random_instance(rng, rng.uniform() < 0.5);
    const LossWithGrad r = loss_l1(in.anchor, in.view(), in.tau);
    EXPECT_GE(r.value, 0.0);
    EXPECT_TRUE(all_finite(r.grad));
  }
}

TEST(LossL2, Examples) {
  const Vec logits{2.0, -1.0, 0.5};
  ContrastiveView single{{logits}, {0}, {0.7}};
  EXPECT_NEAR(loss_l2_discriminative(logits, single, 1.0).value, 0.0, 1e-15);
  const Vec other{0.0, 1.0, 0.0};
  ContrastiveView zero{{logits, other}, {0, 1}, {0.0, 0.0}};
  EXPECT_EQ(loss_l2_discriminative(logits, zero, 1.0).value, 0.0);
}

TEST(LossL2, ChainedThroughFrozenClassifierMatchesFiniteDifferences) {
  Rng rng(15);
  for (int t = 0; t < 60; ++t) {
    const std::size_t d = 2 + rng.index(5), K = 2 + rng.index(6), n = 2 + rng.index(6);
    const ClassifierParams c = init_classifier(K, d, rng);
    Vec z(d);
    for (double& v : z) v = rng.normal();
    std::vector<Vec> bank_logits;
    for (std::size_t a = 0; a < n; ++a) {
      Vec o(d);
      for (double& v : o) v = rng.normal();
      bank_logits.push_back(classify(c, o));
    }
    ContrastiveView v;
    for (const Vec& l : bank_logits) v.candidates.emplace_back(l);
    v.positives = {0, n - 1};
    v.weights = {rng.uniform(), rng.uniform()};
    const double tau = rng.uniform(0.3, 2.0);
    const LossWithGrad r = loss_l2_discriminative(classify(c, z), v, tau);
    const Vec dz = classify_backward(c, z, r.grad, nullptr);
    const Vec fd = finite_diff_grad([&](VecView x) { return loss_l2_discriminative(classify(c, x), v, tau).value; }, z);
    EXPECT_LT(max_rel(dz, fd), 1e-4);
  }
}

TEST(LossClassification, Examples) {
  EXPECT_NEAR(loss_classification(Vec{0.3, 0.3, 0.3, 0.3}, 2).value, std::log(4.0), 1e-6);
  EXPECT_NEAR(loss_classification(Vec{200.0, 0.0}, 0).value, 0.0, 1e-12);
  EXPECT_NEAR(loss_classification(Vec{1, 0}, 0).value, std::log(1 + std::exp(-1.0)), 1e-5);
  EXPECT_NEAR(loss_classification(Vec{1, 0}, 0).value, 0.31326, 1e-5);
  try {
    loss_classification(Vec{1, 0}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::index);
  }
}

TEST(LossClassification, GradientMatchesFiniteDifferences) {
  Rng rng(16);
  for (int t = 0; t < 60; ++t) {
    Vec z(2 + rng.index(8));
    for (double& v : z) v = rng.normal(0, 3);
    const std::size_t label = rng.index(z.size());
    const Vec fd = finite_diff_grad([&](VecView x) { return loss_classification(x, label).value; }, z);
    EXPECT_LT(max_rel(loss_classification(z, label).grad, fd), 1e-4);
  }
}

TEST(LossTotal, Examples) {
  EXPECT_EQ(loss_total(1.5, 7.0, 9.0, 0.0, 0.0), 1.5);
  EXPECT_NEAR(loss_total(1.0, 2.0, 3.0, 0.01, 0.01), 1.05, 1e-15);
  EXPECT_EQ(loss_total(2.0, 0.0, 0.0, 0.01, 0.01), 2.0);
  EXPECT_THROW(loss_total(1.0, 1.0, 1.0, -0.1, 0.0), Error);
  EXPECT_THROW(loss_total(1.0, 1.0, 1.0, 0.0, -0.1), Error);
}

TEST(LossL2Regression, Examples) {
  EXPECT_EQ(loss_l2_regression(Vec{1, 2}, Vec{1, 2}).value, 0.0);
  const LossWithGrad r = loss_l2_regression(Vec{1, 0}, Vec{0, 0});
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.grad, (Vec{2, 0}));
  try {
    loss_l2_regression(Vec{1, 0}, Vec{0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(LossL2Regression, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  for (int t = 0; t < 60; ++t) {
    Vec a(2 + rng.index(6)), b;
    for (double& v : a) v = rng.normal();
    b = a;
    for (double& v : b) v += rng.normal();
    const Vec fd = finite_diff_grad([&](VecView x) { return loss_l2_regression(x, b).value; }, a);
    const Vec g = loss_l2_regression(a, b).grad;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(g[i], fd[i], 1e-5);
  }
}
