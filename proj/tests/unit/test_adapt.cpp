#include <cmath>

#include "gradcheck.hpp"
#include "rclp/adapt.hpp"
#include "test_support.hpp"

namespace rclp {
namespace {

using testing::random_unit_rows;
using testing::rows_of;

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], tol);
}

TEST(AdapterForward, IdentityAndUniformGain) {
  std::mt19937_64 rng(1);
  const EmbeddingSet x = random_unit_rows(rng, 10, 6);
  expect_near(adapter_forward(AffineAdapter::identity(6), x).data, x.data, 1e-7);
  AffineAdapter twice = AffineAdapter::identity(6);
  for (double& g : twice.gain) g = 2.0;
  expect_near(adapter_forward(twice, x).data, x.data, 1e-15);
}

TEST(AdapterForward, GainAndBiasExample) {
  const AffineAdapter a{{1.0, 1e-6}, {0.0, 1.0}};
  const EmbeddingSet y = adapter_forward(a, rows_of({{1, 0}}));
  EXPECT_NEAR(y.data(0, 0), 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(y.data(0, 1), 1 / std::sqrt(2.0), 1e-12);
}

TEST(AdapterForward, ZeroRowIsDegenerate) {
  const AffineAdapter a{{1.0, 1.0}, {-1.0, 0.0}};
  EXPECT_RCLP_ERROR(adapter_forward(a, rows_of({{1, 0}})), ErrorCode::kDegenerateInput);
  EXPECT_RCLP_ERROR(adapter_forward(a, rows_of({{1, 0, 0}})), ErrorCode::kValidation);
}

TEST(CosineLogits, OrthonormalCase) {
  const Matrix l = cosine_logits(rows_of({{1, 0}}, true), rows_of({{1, 0}, {0, 1}}, true), 100.0);
  EXPECT_EQ(l(0, 0), 100.0);
  EXPECT_EQ(l(0, 1), 0.0);
}

TEST(CosineLogits, HandComputedAndHomogeneous) {
  const EmbeddingSet v = rows_of({{0.6, 0.8}, {0.8, -0.6}}, true);
  const EmbeddingSet c = rows_of({{1, 0}, {0.6, 0.8}}, true);
  const Matrix l = cosine_logits(v, c, 1.0);
  EXPECT_NEAR(l(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(l(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(l(1, 0), 0.8, 1e-15);
  EXPECT_NEAR(l(1, 1), 0.0, 1e-15);
  const Matrix l7 = cosine_logits(v, c, 7.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(l7.data()[i], 7.0 * l.data()[i]);
}

TEST(CrossEntropy, UniformLogits) {
  const Matrix logits(3, 5, 2.5);
  const std::vector<std::size_t> labels{0, 3, 4};
  const LossAndGrad lg = ce_loss_and_grads(logits, labels, {true, true, true});
  EXPECT_NEAR(lg.loss, std::log(5.0), 1e-12);
}

TEST(CrossEntropy, SaturatedCorrect) {
  const Matrix logits(1, 2, std::vector<double>{1000.0, 0.0});
  const LossAndGrad lg = ce_loss_and_grads(logits, std::vector<std::size_t>{0}, {true});
  EXPECT_NEAR(lg.loss, 0.0, 1e-12);
  EXPECT_NEAR(lg.dlogits(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(lg.dlogits(0, 1), 0.0, 1e-12);
}

TEST(CrossEntropy, MaskedRowsHaveNoGradientAndEmptyMaskFails) {
  std::mt19937_64 rng(2);
  const Matrix logits = testing::random_matrix(rng, 3, 2);
  const std::vector<std::size_t> labels{0, 1, 1};
  const LossAndGrad lg = ce_loss_and_grads(logits, labels, {true, false, true});
  EXPECT_EQ(lg.dlogits(1, 0), 0.0);
  EXPECT_EQ(lg.dlogits(1, 1), 0.0);
  EXPECT_RCLP_ERROR(ce_loss_and_grads(logits, labels, {false, false, false}), ErrorCode::kValidation);
}

TEST(CrossEntropy, FiniteDifferences) {
  std::mt19937_64 rng(3);
  Matrix logits = testing::random_matrix(rng, 5, 3);
  const std::vector<std::size_t> labels{0, 2, 1, 1, 0};
  const std::vector<bool> mask{true, true, false, true, true};
  const LossAndGrad lg = ce_loss_and_grads(logits, labels, mask);
  const double h = 1e-5;
  for (std::size_t i = 0; i < logits.data().size(); ++i) {
    Matrix plus = logits, minus = logits;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    const double numeric = (ce_loss_and_grads(plus, labels, mask).loss -
                            ce_loss_and_grads(minus, labels, mask).loss) / (2 * h);
    const double analytic = lg.dlogits.data()[i];
    EXPECT_LT(std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}), 1e-4);
  }
}

TEST(Backprop, ZeroUpstreamGivesZero) {
  std::mt19937_64 rng(4);
  const EmbeddingSet x = random_unit_rows(rng, 4, 3);
  const EmbeddingSet p = random_unit_rows(rng, 2, 3);
  const AdapterGrads g = backprop_to_adapter(AffineAdapter::identity(3), x, Matrix(4, 2), p, 100.0,
                                             TrainableSide::kRows);
  for (double v : g.gain) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
}

TEST(Backprop, ShapeMismatchRejected) {
  std::mt19937_64 rng(5);
  const EmbeddingSet x = random_unit_rows(rng, 4, 3);
  const EmbeddingSet p = random_unit_rows(rng, 2, 3);
  EXPECT_RCLP_ERROR(backprop_to_adapter(AffineAdapter::identity(3), x, Matrix(2, 4), p, 1.0,
                                        TrainableSide::kRows),
                    ErrorCode::kValidation);
}

TEST(Backprop, FourSamplesTwoClassesThreeDims) {
  testing::GradInstance g;
  std::mt19937_64 rng(6);
  g.x = random_unit_rows(rng, 4, 3);
  g.partner = random_unit_rows(rng, 2, 3);
  g.adapter = {{1.1, 0.9, 1.2}, {0.05, -0.1, 0.02}};
  g.labels = {0, 1, 1, 0};
  g.mask = {true, true, true, true};
  EXPECT_LT(testing::max_relative_gradient_error(g), 1e-4);
}

// The gradient of the loss w.r.t. a renormalized row lies in the tangent space:
// moving every gain uniformly does not change the output.
TEST(Backprop, UniformGainScalingLeavesLossUnchanged) {
  const testing::GradInstance g = testing::random_grad_instance(8);
  AffineAdapter scaled = g.adapter;
  for (double& v : scaled.gain) v *= 3.0;
  for (double& v : scaled.bias) v *= 3.0;
  EXPECT_NEAR(testing::instance_loss(g, scaled), testing::instance_loss(g, g.adapter), 1e-12);

  const LossAndGrad lg = ce_loss_and_grads(testing::instance_logits(g, g.adapter), g.labels, g.mask);
  const AdapterGrads grads = backprop_to_adapter(g.adapter, g.x, lg.dlogits, g.partner, g.scale, g.side,
                                                 g.basis ? &*g.basis : nullptr);
  double radial = 0.0;
  for (std::size_t c = 0; c < g.adapter.dims(); ++c) {
    radial += grads.gain[c] * g.adapter.gain[c] + grads.bias[c] * g.adapter.bias[c];
  }
  EXPECT_NEAR(radial, 0.0, 1e-10);
}

class GradientProperties : public ::testing::TestWithParam<int> {};

TEST_P(GradientProperties, MatchesFiniteDifferences) {
  const auto g = testing::random_grad_instance(static_cast<std::uint64_t>(GetParam()));
  EXPECT_LT(testing::max_relative_gradient_error(g), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientProperties, ::testing::Range(0, 120));

TEST(ForwardProperty, OutputRowsAreUnit) {
  std::mt19937_64 rng(9);
  const EmbeddingSet x = random_unit_rows(rng, 20, 5);
  AffineAdapter a = AffineAdapter::identity(5);
  for (double& v : a.gain) v = 0.5 + (rng() % 100) / 50.0;
  for (double& v : a.bias) v = ((rng() % 100) - 50.0) / 200.0;
  const EmbeddingSet y = adapter_forward(a, x);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(norm2(y.data.row(i)), 1.0, 1e-12);
}

TEST(ClassCenters, SingletonsEqualSamples) {
  const EmbeddingSet v = rows_of({{0.6, 0.8}, {1, 0}}, true);
  const EmbeddingSet fb = rows_of({{0, 1}, {1, 0}}, true);
  const ClassCenters c = class_centers(v, std::vector<std::size_t>{1, 0}, 2, fb);
  EXPECT_NEAR(c.centers(1, 0), 0.6, 1e-15);
  EXPECT_NEAR(c.centers(0, 0), 1.0, 1e-15);
  EXPECT_EQ(c.counts, (std::vector<std::size_t>{1, 1}));
}

TEST(ClassCenters, SymmetricMean) {
  const EmbeddingSet v = rows_of({{1, 0}, {0, 1}}, true);
  const EmbeddingSet fb = rows_of({{0, 1}, {1, 0}}, true);
  const ClassCenters c = class_centers(v, std::vector<std::size_t>{0, 0}, 2, fb);
  EXPECT_NEAR(c.centers(0, 0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(c.centers(0, 1), 1 / std::sqrt(2.0), 1e-15);
  // Class 1 is empty and takes the fallback row.
  EXPECT_EQ(c.centers(1, 0), 1.0);
  EXPECT_EQ(c.centers(1, 1), 0.0);
}

TEST(ClassCenters, MaskRestrictsMembers) {
  const EmbeddingSet v = rows_of({{1, 0}, {0, 1}}, true);
  const EmbeddingSet fb = rows_of({{0.6, 0.8}, {0.8, 0.6}}, true);
  const std::vector<bool> mask{false, true};
  const ClassCenters c = class_centers(v, std::vector<std::size_t>{0, 1}, 2, fb, &mask);
  EXPECT_NEAR(c.centers(0, 0), 0.6, 1e-15);
  EXPECT_EQ(c.counts[0], 0u);
}

TEST(Sgd, VanillaStep) {
  std::vector<double> p{1.0, -2.0}, buf{0.0, 0.0};
  sgd_update(p, std::vector<double>{0.5, -1.0}, buf, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], -1.9);
}

TEST(Sgd, MomentumTwoSteps) {
  std::vector<double> p{0.0}, buf{0.0};
  const double g = 0.25, lr = 0.1;
  sgd_update(p, std::vector<double>{g}, buf, lr, 0.9, 0.0);
  sgd_update(p, std::vector<double>{g}, buf, lr, 0.9, 0.0);
  EXPECT_NEAR(p[0], -lr * (g + 1.9 * g), 1e-15);
}

TEST(Sgd, ZeroGradientIsIdentity) {
  AffineAdapter a{{1.5, -0.5}, {0.25, 0.0}};
  const AffineAdapter before = a;
  OptimizerState s = OptimizerState::for_adapter(a, 1e-3, 0.9, 0.0);
  sgd_step(a, {{0, 0}, {0, 0}}, s);
  EXPECT_EQ(a, before);
  EXPECT_EQ(s.step_count, 1u);
}

TEST(Sgd, GainClampedAwayFromZero) {
  AffineAdapter a{{1e-3, -1e-3}, {0, 0}};
  OptimizerState s = OptimizerState::for_adapter(a, 1.0, 0.0, 0.0);
  sgd_step(a, {{1e-3, -0.9995e-3}, {0, 0}}, s);
  EXPECT_EQ(a.gain[0], kMinGain);
  EXPECT_EQ(a.gain[1], -kMinGain);
}

TEST(AdapterIo, RoundTripAndTagCheck) {
  const auto dir = testing::scratch_dir("adapter_io");
  const AffineAdapter a{{1.25, 0.5, 2.0}, {0.1, -0.2, 0.0}};
  save_adapter(a, dir / "a.rclp");
  EXPECT_EQ(load_adapter(dir / "a.rclp"), a);
  save_container(LabelVector{{0}}, dir / "l.rclp");
  EXPECT_RCLP_ERROR(load_adapter(dir / "l.rclp"), ErrorCode::kFormat);
}

}  // namespace
}  // namespace rclp
