#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "camf/parameters.hpp"

namespace camf {
namespace {

// One bias-corrected Adam update evaluated by hand in double precision.
struct AdamOracle {
  double m = 0, v = 0, x = 0;
  int t = 0;
  double step(double g, double lr = 0.001, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double m_hat = m / (1 - std::pow(b1, t));
    const double v_hat = v / (1 - std::pow(b2, t));
    const double delta = -lr * m_hat / (std::sqrt(v_hat) + eps);
    x += delta;
    return delta;
  }
};

Gradients scalar_gradient(const Parameter& p, double g) {
  Gradients grads;
  grads.entry(p).row(0)[0] = g;
  return grads;
}

TEST(Adam, FirstStepHandEvaluated) {
  ParameterStore store;
  auto& p = store.add("w", 1, 1);
  adam_step(store, scalar_gradient(p, 0.5), {});
  // -lr * 0.5 / (sqrt(0.25) + 1e-8)
  EXPECT_FLOAT_EQ(p.values()[0], static_cast<float>(-0.001 * 0.5 / (0.5 + 1e-8)));
  EXPECT_NEAR(p.values()[0], -0.000999999, 1e-9);
  EXPECT_FLOAT_EQ(p.first_moment()[0], 0.05f);
  EXPECT_FLOAT_EQ(p.second_moment()[0], 0.00025f);
  EXPECT_EQ(store.step(), 1u);
}

TEST(Adam, SuccessiveStepsMatchOracle) {
  ParameterStore store;
  auto& p = store.add("w", 1, 1);
  AdamOracle oracle;
  for (double g : {0.5, 0.5, -0.2, 0.05, 3.0}) {
    const float before = p.values()[0];
    adam_step(store, scalar_gradient(p, g), {});
    const double delta = oracle.step(g);
    EXPECT_NEAR(p.values()[0] - before, delta, 1e-9);
    // Moments are stored in 32 bits.
    EXPECT_FLOAT_EQ(p.first_moment()[0], static_cast<float>(oracle.m));
    EXPECT_FLOAT_EQ(p.second_moment()[0], static_cast<float>(oracle.v));
  }
}

TEST(Adam, ConstantGradientAccumulatesMomentsButKeepsCorrectedStep) {
  // With g constant, m_hat = g and v_hat = g^2 at every step: the moments
  // grow while the corrected step stays lr * |g| / (|g| + eps).
  ParameterStore store;
  auto& p = store.add("w", 1, 1);
  adam_step(store, scalar_gradient(p, 0.5), {});
  const float m1 = p.first_moment()[0], v1 = p.second_moment()[0], x1 = p.values()[0];
  adam_step(store, scalar_gradient(p, 0.5), {});
  EXPECT_GT(p.first_moment()[0], m1);
  EXPECT_GT(p.second_moment()[0], v1);
  EXPECT_NEAR(p.values()[0] - x1, x1, 1e-9);
}

TEST(Adam, DifferentGradientsDifferentStepMagnitudes) {
  ParameterStore store;
  auto& p = store.add("w", 1, 1);
  adam_step(store, scalar_gradient(p, 0.5), {});
  const float x1 = p.values()[0];
  adam_step(store, scalar_gradient(p, 0.1), {});
  const double second = p.values()[0] - x1;
  EXPECT_GT(std::abs(std::abs(second) - std::abs(x1)), 1e-5);
}

TEST(Adam, AbsentParametersAndRowsAreUntouched) {
  ParameterStore store;
  store.add("table", 3, 2);
  store.add("other", 1, 2);
  auto& table = store.get("table");
  auto& other = store.get("other");
  std::fill(table.values().begin(), table.values().end(), 0.25f);
  std::fill(other.values().begin(), other.values().end(), -1.0f);
  Gradients grads;
  grads.entry(table).row(1)[0] = 0.3;
  adam_step(store, grads, {});
  adam_step(store, grads, {});
  for (std::size_t k : {0u, 1u, 4u, 5u}) {
    EXPECT_EQ(table.values()[k], 0.25f);
    EXPECT_EQ(table.first_moment()[k], 0.0f);
    EXPECT_EQ(table.second_moment()[k], 0.0f);
  }
  EXPECT_NE(table.values()[2], 0.25f);
  EXPECT_EQ(other.values()[0], -1.0f);
  EXPECT_EQ(other.first_moment()[0], 0.0f);
  EXPECT_EQ(store.step(), 2u);
}

TEST(Adam, NonFiniteGradientIsTrainingError) {
  ParameterStore store;
  auto& p = store.add("w", 2, 1);
  Gradients grads;
  grads.entry(p).row(0)[0] = 1.0;
  grads.entry(p).row(1)[0] = std::numeric_limits<double>::quiet_NaN();
  const ParameterStore before = store;
  try {
    adam_step(store, grads, {});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("w row 1"), std::string::npos);
  }
  EXPECT_TRUE(store == before);
}

TEST(Adam, BetasOutsideUnitIntervalAreRejected) {
  ParameterStore store;
  AdamOptions bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(adam_step(store, Gradients{}, bad), ContractViolation);
}

TEST(Init, GaussianStatisticsOverSeeds) {
  double mean_sum = 0, std_sum = 0;
  const int seeds = 12;
  for (int seed = 0; seed < seeds; ++seed) {
    ParameterStore store;
    store.add("table", 100, 100);
    init_gaussian(store, static_cast<std::uint64_t>(seed), 0.01);
    const auto v = store.get("table").values();
    double sum = 0, sq = 0;
    for (float x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    for (float x : v) sq += (x - mean) * (x - mean);
    const double sd = std::sqrt(sq / static_cast<double>(v.size() - 1));
    EXPECT_GE(mean, -0.0005) << "seed " << seed;
    EXPECT_LE(mean, 0.0005) << "seed " << seed;
    EXPECT_GE(sd, 0.0095) << "seed " << seed;
    EXPECT_LE(sd, 0.0105) << "seed " << seed;
    mean_sum += mean;
    std_sum += sd;
  }
  EXPECT_NEAR(mean_sum / seeds, 0.0, 0.0002);
  EXPECT_NEAR(std_sum / seeds, 0.01, 0.0002);
}

TEST(Init, BiasesAreZeroAndMomentsClear) {
  ParameterStore store;
  store.add("layer.weight", 4, 3);
  store.add("layer.bias", 1, 4);
  init_gaussian(store, 3, 0.01);
  for (float b : store.get("layer.bias").values()) EXPECT_EQ(b, 0.0f);
  for (float m : store.get("layer.weight").first_moment()) EXPECT_EQ(m, 0.0f);
  EXPECT_NE(store.get("layer.weight").values()[0], 0.0f);
}

TEST(Init, SameSeedBitEqualDifferentSeedDiffers) {
  auto make = [](std::uint64_t seed) {
    ParameterStore s;
    s.add("a", 10, 4);
    s.add("b", 3, 3);
    init_gaussian(s, seed, 0.01);
    return s;
  };
  EXPECT_TRUE(make(5) == make(5));
  EXPECT_FALSE(make(5) == make(6));
}

TEST(Init, StreamsAreKeyedByName) {
  // Adding a parameter does not shift another parameter's values.
  ParameterStore a, b;
  a.add("x", 5, 5);
  b.add("extra", 7, 2);
  b.add("x", 5, 5);
  init_gaussian(a, 9, 0.01);
  init_gaussian(b, 9, 0.01);
  EXPECT_TRUE(a.get("x") == b.get("x"));
}

TEST(Store, RejectsDuplicateAndBadNames) {
  ParameterStore store;
  store.add("x", 1, 1);
  EXPECT_THROW(store.add("x", 2, 2), ContractViolation);
  EXPECT_THROW(store.add("has space", 1, 1), ContractViolation);
  EXPECT_THROW(store.get("missing"), ContractViolation);
}

ParameterStore trained_store() {
  ParameterStore store;
  store.add("emb", 6, 3);
  store.add("out.weight", 1, 3);
  store.add("out.bias", 1, 1);
  init_gaussian(store, 11, 0.3);
  Gradients grads;
  grads.entry(store.get("emb")).row(4)[1] = 0.7;
  grads.entry(store.get("out.bias")).row(0)[0] = -0.1;
  adam_step(store, grads, {});
  adam_step(store, grads, {});
  // A few awkward bit patterns.
  store.get("emb").values()[0] = -0.0f;
  store.get("emb").values()[1] = std::numeric_limits<float>::denorm_min();
  store.get("emb").values()[2] = std::numeric_limits<float>::max();
  return store;
}

TEST(Checkpoint, BitExactRoundTripWithMoments) {
  const ParameterStore store = trained_store();
  std::stringstream ss;
  write_checkpoint(ss, store, {{"model", "CAMF"}, {"factors", "8"}});
  const auto ck = read_checkpoint(ss);
  EXPECT_TRUE(ck.params == store);
  EXPECT_EQ(ck.params.step(), 2u);
  EXPECT_TRUE(std::signbit(ck.params.get("emb").values()[0]));
  ASSERT_NE(ck.meta("model"), nullptr);
  EXPECT_EQ(*ck.meta("model"), "CAMF");
  EXPECT_EQ(ck.meta("absent"), nullptr);

  std::stringstream again;
  write_checkpoint(again, ck.params, ck.metadata);
  EXPECT_EQ(again.str(), ss.str());
}

TEST(Checkpoint, ManifestListsMomentsAndOffsets) {
  std::stringstream ss;
  write_checkpoint(ss, trained_store());
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind("camf-checkpoint 1\n", 0), 0u);
  EXPECT_NE(text.find("\nemb 6 3 0\n"), std::string::npos);
  EXPECT_NE(text.find("\nemb/adam_m 6 3 72\n"), std::string::npos);
  EXPECT_NE(text.find("\nentries 9\n"), std::string::npos);
}

TEST(Checkpoint, LittleEndianFloatBytes) {
  ParameterStore store;
  store.add("x", 1, 1).values()[0] = 1.0f;  // 0x3f800000
  std::stringstream ss;
  write_checkpoint(ss, store);
  const std::string text = ss.str();
  const auto body = text.find("end\n") + 4;
  EXPECT_EQ(text.substr(body, 4), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Checkpoint, TruncatedFileIsLoadError) {
  std::stringstream ss;
  write_checkpoint(ss, trained_store());
  std::string text = ss.str();
  text.resize(text.size() - 5);
  std::stringstream cut(text);
  EXPECT_THROW(read_checkpoint(cut), LoadError);
}

}  // namespace
}  // namespace camf
