#include "rclp/adapt.hpp"

#include <algorithm>
#include <cmath>

#include "rclp/error.hpp"
#include "rclp/kernels.hpp"

namespace rclp {

AffineAdapter AffineAdapter::identity(std::size_t dims) {
  return {std::vector<double>(dims, 1.0), std::vector<double>(dims, 0.0)};
}

OptimizerState OptimizerState::for_adapter(const AffineAdapter& a, double lr, double momentum,
                                           double weight_decay) {
  OptimizerState s;
  s.gain_buffer.assign(a.dims(), 0.0);
  s.bias_buffer.assign(a.dims(), 0.0);
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  return s;
}

EmbeddingSet ClassCenters::as_embeddings() const { return make_embeddings(centers, true); }

EmbeddingSet adapter_forward(const AffineAdapter& a, const EmbeddingSet& x) {
  require(a.dims() == x.dims(), ErrorCode::kValidation, "adapter dims do not match embeddings");
  EmbeddingSet out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = out.data.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = row[c] * a.gain[c] + a.bias[c];
  }
  return l2_normalize(out);
}

Matrix cosine_logits(const EmbeddingSet& rows, const EmbeddingSet& cols, double scale) {
  require(rows.dims() == cols.dims(), ErrorCode::kValidation, "logit operands differ in dims");
  Matrix out = kernels::omp::gram_nt(rows.data, cols.data);
  for (double& v : out.data()) v *= scale;
  return out;
}

LossAndGrad ce_loss_and_grads(const Matrix& logits, std::span<const std::size_t> labels,
                              const std::vector<bool>& mask) {
  const std::size_t n = logits.rows();
  const std::size_t m = logits.cols();
  require(labels.size() == n && mask.size() == n, ErrorCode::kValidation,
          "labels/mask length does not match logits");
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  require(count > 0, ErrorCode::kValidation, "cross-entropy mask selects no samples");

  LossAndGrad out{0.0, Matrix(n, m)};
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    require(labels[j] < m, ErrorCode::kValidation, "label exceeds class count");
    const auto row = logits.row(j);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    const double log_z = peak + std::log(z);
    out.loss += (log_z - row[labels[j]]) * inv;
    auto g = out.dlogits.row(j);
    for (std::size_t i = 0; i < m; ++i) g[i] = std::exp(row[i] - log_z) * inv;
    g[labels[j]] -= inv;
  }
  return out;
}

LossAndGrad ce_loss_and_grads(const Matrix& logits, const PseudoLabelSet& labels,
                              const std::vector<bool>& mask) {
  return ce_loss_and_grads(logits, labels.labels, mask);
}

namespace {

bool is_projecting(const ProjectionBasis* basis) {
  return basis != nullptr && basis->variant != ProjectionVariant::kP0;
}

// out = B (B^T v)
void apply_projection(const Matrix& b, std::span<const double> v, std::vector<double>& coef,
                      std::span<double> out) {
  std::fill(coef.begin(), coef.end(), 0.0);
  for (std::size_t a = 0; a < b.rows(); ++a) {
    for (std::size_t c = 0; c < b.cols(); ++c) coef[c] += v[a] * b(a, c);
  }
  for (std::size_t a = 0; a < b.rows(); ++a) {
    double s = 0.0;
    for (std::size_t c = 0; c < b.cols(); ++c) s += b(a, c) * coef[c];
    out[a] = s;
  }
}

// Pulls g back through y = v / |v| given y and |v|: (g - y (y.g)) / |v|
void pullback_normalize(std::span<const double> y, double norm, std::span<double> g) {
  const double yg = dot(y, g);
  for (std::size_t a = 0; a < g.size(); ++a) g[a] = (g[a] - y[a] * yg) / norm;
}

}  // namespace

EmbeddingSet adapt_and_project(const AffineAdapter& a, const EmbeddingSet& x,
                               const ProjectionBasis* basis) {
  EmbeddingSet u = adapter_forward(a, x);
  if (!is_projecting(basis)) return u;
  return project(*basis, u);
}

AdapterGrads backprop_to_adapter(const AffineAdapter& a, const EmbeddingSet& x,
                                 const Matrix& dlogits, const EmbeddingSet& partner, double scale,
                                 TrainableSide side, const ProjectionBasis* basis) {
  const std::size_t d = x.dims();
  require(a.dims() == d && partner.dims() == d, ErrorCode::kValidation,
          "adapter, inputs and partner must share dims");
  const bool rows_side = side == TrainableSide::kRows;
  require(dlogits.rows() == (rows_side ? x.rows() : partner.rows()) &&
              dlogits.cols() == (rows_side ? partner.rows() : x.rows()),
          ErrorCode::kValidation, "dlogits shape does not match operands");
  const bool projecting = is_projecting(basis);
  if (projecting) {
    require(basis->source_dims == d, ErrorCode::kValidation, "basis dims do not match inputs");
  }

  AdapterGrads grads{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  std::vector<double> pre(d), u(d), q(d), y(d), g(d), tmp(d);
  std::vector<double> coef(projecting ? basis->basis.cols() : 0);

  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xt = x.data.row(t);
    for (std::size_t c = 0; c < d; ++c) pre[c] = xt[c] * a.gain[c] + a.bias[c];
    const double pre_norm = norm2(pre);
    if (!(pre_norm > kZeroRowThreshold)) {
      fail(ErrorCode::kDegenerateInput, "adapter maps row '" + x.ids[t] + "' to zero");
    }
    for (std::size_t c = 0; c < d; ++c) u[c] = pre[c] / pre_norm;

    double q_norm = 1.0;
    if (projecting) {
      apply_projection(basis->basis, u, coef, q);
      q_norm = norm2(q);
      if (!(q_norm > kProjectionFloor)) {
        fail(ErrorCode::kDegenerateProjection,
             "row '" + x.ids[t] + "' lies outside the projection span");
      }
      for (std::size_t c = 0; c < d; ++c) y[c] = q[c] / q_norm;
    } else {
      y = u;
    }

    // Upstream gradient w.r.t. the final unit row.
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t o = 0; o < partner.rows(); ++o) {
      const double w = scale * (rows_side ? dlogits(t, o) : dlogits(o, t));
      if (w == 0.0) continue;
      const auto p = partner.data.row(o);
      for (std::size_t c = 0; c < d; ++c) g[c] += w * p[c];
    }

    if (projecting) {
      pullback_normalize(y, q_norm, g);
      apply_projection(basis->basis, g, coef, tmp);  // P is symmetric
      g = tmp;
    }
    pullback_normalize(u, pre_norm, g);
    for (std::size_t c = 0; c < d; ++c) {
      grads.gain[c] += g[c] * xt[c];
      grads.bias[c] += g[c];
    }
  }
  return grads;
}

ClassCenters class_centers(const EmbeddingSet& visual, std::span<const std::size_t> labels,
                           std::size_t m, const EmbeddingSet& fallback,
                           const std::vector<bool>* mask) {
  const std::size_t d = visual.dims();
  require(labels.size() == visual.rows(), ErrorCode::kValidation, "label count mismatch");
  require(fallback.rows() == m && fallback.dims() == d, ErrorCode::kValidation,
          "fallback must hold one row per class");
  require(!mask || mask->size() == labels.size(), ErrorCode::kValidation, "mask length mismatch");

  ClassCenters out{Matrix(m, d), std::vector<std::size_t>(m, 0)};
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (mask && !(*mask)[j]) continue;
    require(labels[j] < m, ErrorCode::kValidation, "label exceeds class count");
    auto c = out.centers.row(labels[j]);
    const auto v = visual.data.row(j);
    for (std::size_t a = 0; a < d; ++a) c[a] += v[a];
    ++out.counts[labels[j]];
  }
  for (std::size_t i = 0; i < m; ++i) {
    auto c = out.centers.row(i);
    const double n = norm2(c);
    if (out.counts[i] == 0 || !(n > kZeroRowThreshold)) {
      const auto f = fallback.data.row(i);
      const double fn = norm2(f);
      for (std::size_t a = 0; a < d; ++a) c[a] = f[a] / fn;
    } else {
      for (double& v : c) v /= n;
    }
  }
  return out;
}

void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> buffer,
                double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    buffer[i] = momentum * buffer[i] + grads[i] + weight_decay * params[i];
    params[i] -= lr * buffer[i];
  }
}

void sgd_step(AffineAdapter& a, const AdapterGrads& grads, OptimizerState& state) {
  require(grads.gain.size() == a.dims() && grads.bias.size() == a.dims() &&
              state.gain_buffer.size() == a.dims() && state.bias_buffer.size() == a.dims(),
          ErrorCode::kValidation, "optimizer shapes do not match the adapter");
  sgd_update(a.gain, grads.gain, state.gain_buffer, state.lr, state.momentum, state.weight_decay);
  sgd_update(a.bias, grads.bias, state.bias_buffer, state.lr, state.momentum, state.weight_decay);
  for (double& g : a.gain) {
    if (std::abs(g) < kMinGain) g = g < 0.0 ? -kMinGain : kMinGain;
  }
  ++state.step_count;
}

void save_adapter(const AffineAdapter& a, const std::filesystem::path& path) {
  container::ByteWriter w;
  w.header(container::Tag::kAdapter);
  w.u64(a.dims());
  for (double v : a.gain) w.f64(v);
  for (double v : a.bias) w.f64(v);
  container::write_file(path, w.bytes());
}

AffineAdapter load_adapter(const std::filesystem::path& path) {
  container::Tag tag{};
  auto r = container::open(path, tag);
  if (tag != container::Tag::kAdapter) fail(ErrorCode::kFormat, path.string() + " is not an adapter");
  const std::uint64_t d = r.u64();
  if (d > r.remaining() / 16) fail(ErrorCode::kIo, "truncated adapter payload");
  AffineAdapter a;
  a.gain.resize(d);
  a.bias.resize(d);
  for (double& v : a.gain) v = r.f64();
  for (double& v : a.bias) v = r.f64();
  for (std::uint64_t i = 0; i < d; ++i) {
    if (!std::isfinite(a.gain[i]) || !std::isfinite(a.bias[i])) {
      fail(ErrorCode::kValidation, "non-finite adapter parameter");
    }
  }
  return a;
}

}  // namespace rclp
