#include "ogen/generator.hpp"

#include <cmath>

namespace ogen {

namespace {

Eigen::Map<Mat> as_mat(Mat& m) { return {m.data(), m.rows(), m.cols()}; }
Eigen::Map<Mat> as_mat(Vec& v) { return {v.data(), v.size(), 1}; }
Eigen::Map<const Mat> as_mat(const Mat& m) { return {m.data(), m.rows(), m.cols()}; }
Eigen::Map<const Mat> as_mat(const Vec& v) { return {v.data(), v.size(), 1}; }

template <typename T>
auto make_views(T& t) {
  return std::array{as_mat(t.w_q),     as_mat(t.w_k),    as_mat(t.w_v),   as_mat(t.w_o),    as_mat(t.ln_gain),
                    as_mat(t.ln_bias), as_mat(t.ffn_w1), as_mat(t.ffn_b1), as_mat(t.ffn_w2), as_mat(t.ffn_b2)};
}

void check_input(const Mat& m, int d, const char* what) {
  if (m.rows() != d) throw ValidationError(std::string(what) + ": expected " + std::to_string(d) + " rows");
  if (m.cols() < 1) throw ValidationError(std::string(what) + ": needs at least one column");
}

// Row-wise softmax.
Mat softmax_rows(const Mat& logits) {
  Mat out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

// Column-wise layer norm; records normalized values and inverse std on tape.
Mat layer_norm(const Mat& x, const GeneratorParams& p, ForwardTape& tape) {
  const double d = static_cast<double>(x.rows());
  tape.ln_normalized.resize(x.rows(), x.cols());
  tape.ln_inv_std.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const Vec centered = x.col(c).array() - mean;
    const double var = centered.squaredNorm() / d;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    tape.ln_inv_std[c] = inv_std;
    tape.ln_normalized.col(c) = centered * inv_std;
  }
  Mat y = (tape.ln_normalized.array().colwise() * p.ln_gain.array()).matrix();
  y.colwise() += p.ln_bias;
  return y;
}

Mat layer_norm_backward(const Mat& dy, const ForwardTape& tape, GeneratorGrads& g) {
  const GeneratorParams& p = *tape.params;
  const Mat& xhat = tape.ln_normalized;
  g.ln_gain += (dy.array() * xhat.array()).rowwise().sum().matrix();
  g.ln_bias += dy.rowwise().sum();
  const Mat dxhat = (dy.array().colwise() * p.ln_gain.array()).matrix();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index c = 0; c < dy.cols(); ++c) {
    const double mean_d = dxhat.col(c).mean();
    const double mean_dx = dxhat.col(c).dot(xhat.col(c)) / static_cast<double>(dy.rows());
    dx.col(c) = tape.ln_inv_std[c] * (dxhat.col(c).array() - mean_d - xhat.col(c).array() * mean_dx).matrix();
  }
  return dx;
}

Vec ffn_forward(const Vec& w, const GeneratorParams& p, ForwardTape& tape) {
  tape.ffn_pre = p.ffn_w1 * w + p.ffn_b1;
  tape.ffn_act = tape.ffn_pre.cwiseMax(0.0);
  return p.ffn_w2 * tape.ffn_act + p.ffn_b2;
}

Vec ffn_backward(const Vec& df, const Vec& w, const ForwardTape& tape, GeneratorGrads& g) {
  const GeneratorParams& p = *tape.params;
  g.ffn_w2 += df * tape.ffn_act.transpose();
  g.ffn_b2 += df;
  const Vec da = p.ffn_w2.transpose() * df;
  const Vec dh = (tape.ffn_pre.array() > 0.0).select(da, 0.0);
  g.ffn_w1 += dh * w.transpose();
  g.ffn_b1 += dh;
  return p.ffn_w1.transpose() * dh;
}

struct AttentionGrads {
  Mat d_queries, d_keys, d_values;
};

AttentionGrads mhca_backward(const Mat& d_out, const ForwardTape& t, GeneratorGrads& g) {
  const GeneratorParams& p = *t.params;
  const int dh = p.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  g.w_o += d_out * t.head_concat.transpose();
  const Mat d_concat = p.w_o.transpose() * d_out;

  Mat dq(t.q_proj.rows(), t.q_proj.cols());
  Mat dk(t.k_proj.rows(), t.k_proj.cols());
  Mat dv(t.v_proj.rows(), t.v_proj.cols());
  for (int h = 0; h < p.heads; ++h) {
    const Mat& a = t.attention[h];  // Q x K
    const auto d_head = d_concat.middleRows(h * dh, dh);
    dv.middleRows(h * dh, dh) = d_head * a;
    const Mat da = d_head.transpose() * t.v_proj.middleRows(h * dh, dh);  // Q x K
    const Vec row_dot = (da.array() * a.array()).rowwise().sum();
    const Mat ds = ((da.colwise() - row_dot).array() * a.array()).matrix() * scale;
    dq.middleRows(h * dh, dh) = t.k_proj.middleRows(h * dh, dh) * ds.transpose();
    dk.middleRows(h * dh, dh) = t.q_proj.middleRows(h * dh, dh) * ds;
  }
  g.w_q += dq * t.queries.transpose();
  g.w_k += dk * t.keys.transpose();
  g.w_v += dv * t.values.transpose();
  return {p.w_q.transpose() * dq, p.w_k.transpose() * dk, p.w_v.transpose() * dv};
}

}  // namespace

std::array<Eigen::Map<Mat>, kNumTensors> GeneratorTensors::views() { return make_views(*this); }
std::array<Eigen::Map<const Mat>, kNumTensors> GeneratorTensors::views() const { return make_views(*this); }

GeneratorTensors GeneratorTensors::zeros_like() const {
  GeneratorTensors z = *this;
  for (auto v : z.views()) v.setZero();
  return z;
}

std::size_t GeneratorTensors::num_values() const {
  std::size_t n = 0;
  for (const auto& v : views()) n += static_cast<std::size_t>(v.size());
  return n;
}

bool GeneratorTensors::all_finite() const {
  for (const auto& v : views())
    if (!v.allFinite()) return false;
  return true;
}

bool GeneratorTensors::operator==(const GeneratorTensors& o) const {
  const auto a = views();
  const auto b = o.views();
  for (int i = 0; i < kNumTensors; ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (a[i] != b[i]) return false;
  }
  return true;
}

bool GeneratorParams::same_shape(const GeneratorTensors& other) const {
  const auto a = views();
  const auto b = other.views();
  for (int i = 0; i < kNumTensors; ++i)
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
  return true;
}

GeneratorGrads& GeneratorGrads::operator+=(const GeneratorGrads& o) {
  auto a = views();
  const auto b = o.views();
  for (int i = 0; i < kNumTensors; ++i) a[i] += b[i];
  return *this;
}

GeneratorGrads zero_grads(const GeneratorParams& params) { return GeneratorGrads(params.zeros_like()); }

GeneratorParams init_params(int heads, int dim, int ffn_dim, std::uint64_t seed) {
  if (heads <= 0 || dim <= 0 || ffn_dim <= 0) throw ValidationError("generator shape values must be positive");
  if (dim % heads != 0)
    throw ValidationError("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  GeneratorParams p;
  p.heads = heads;
  p.dim = dim;
  p.ffn_dim = ffn_dim;
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> uni(-bound, bound);
  auto fill = [&](Mat& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = uni(rng);
    round_to_float(m);
  };
  fill(p.w_q, dim, dim);
  fill(p.w_k, dim, dim);
  fill(p.w_v, dim, dim);
  p.w_o = Mat::Zero(dim, dim);
  p.ln_gain = Vec::Ones(dim);
  p.ln_bias = Vec::Zero(dim);
  fill(p.ffn_w1, ffn_dim, dim);
  p.ffn_b1 = Vec::Zero(ffn_dim);
  fill(p.ffn_w2, dim, ffn_dim);
  p.ffn_b2 = Vec::Zero(dim);
  return p;
}

MhcaOutput mhca(const Mat& queries, const Mat& keys, const Mat& values, const GeneratorParams& params) {
  const int d = params.dim;
  check_input(queries, d, "mhca queries");
  check_input(keys, d, "mhca keys");
  check_input(values, d, "mhca values");
  if (keys.cols() != values.cols()) throw ValidationError("mhca: key and value counts differ");

  MhcaOutput r;
  ForwardTape& t = r.tape;
  t.kind = TapeKind::kCrossAttention;
  t.params = &params;
  t.queries = queries;
  t.keys = keys;
  t.values = values;
  t.q_proj = params.w_q * queries;
  t.k_proj = params.w_k * keys;
  t.v_proj = params.w_v * values;

  const int dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  t.head_concat.resize(d, queries.cols());
  t.attention.resize(params.heads);
  for (int h = 0; h < params.heads; ++h) {
    const Mat logits = t.q_proj.middleRows(h * dh, dh).transpose() * t.k_proj.middleRows(h * dh, dh) * scale;
    t.attention[h] = softmax_rows(logits);
    t.head_concat.middleRows(h * dh, dh) = t.v_proj.middleRows(h * dh, dh) * t.attention[h].transpose();
  }
  r.out = params.w_o * t.head_concat;
  return r;
}

Synthesis extrapolate_per_class(const NeighborContext& ctx, const Vec& conditioning, const GeneratorParams& params) {
  const Eigen::Index K = ctx.support_features.cols();
  const Mat queries = conditioning.replicate(1, K);
  MhcaOutput att = mhca(queries, ctx.neighbor_embeddings, ctx.support_features, params);
  Synthesis s;
  s.tape = std::move(att.tape);
  s.tape.kind = TapeKind::kPerClass;
  s.features = layer_norm(ctx.support_features + att.out, params, s.tape);
  return s;
}

Synthesis extrapolate_jointly(const NeighborContext& ctx, const Vec& conditioning, const GeneratorParams& params) {
  MhcaOutput att = mhca(conditioning, ctx.neighbor_embeddings, ctx.support_features, params);
  Synthesis s;
  s.tape = std::move(att.tape);
  s.tape.kind = TapeKind::kJoint;
  const Vec projected = ffn_forward(conditioning, params, s.tape);
  s.features = layer_norm(projected + att.out, params, s.tape);
  return s;
}

Synthesis project_directly(const Vec& conditioning, const GeneratorParams& params) {
  if (conditioning.size() != params.dim) throw ValidationError("conditioning dimension mismatch");
  Synthesis s;
  s.tape.kind = TapeKind::kDirect;
  s.tape.params = &params;
  s.tape.queries = conditioning;
  const Vec projected = ffn_forward(conditioning, params, s.tape);
  s.features = layer_norm(projected, params, s.tape);
  return s;
}

GeneratorBackward backward(ForwardTape& tape, const Mat& upstream) {
  if (tape.consumed) throw std::logic_error("forward tape already consumed by a backward call");
  if (tape.params == nullptr) throw std::logic_error("forward tape is empty");
  tape.consumed = true;
  const GeneratorParams& p = *tape.params;

  GeneratorBackward r;
  r.grads = zero_grads(p);
  auto& g = r.grads;

  switch (tape.kind) {
    case TapeKind::kCrossAttention: {
      if (upstream.rows() != p.dim || upstream.cols() != tape.queries.cols())
        throw ValidationError("upstream gradient shape mismatch");
      auto a = mhca_backward(upstream, tape, g);
      r.d_queries = std::move(a.d_queries);
      r.d_keys = std::move(a.d_keys);
      r.d_values = std::move(a.d_values);
      break;
    }
    case TapeKind::kPerClass: {
      if (upstream.rows() != p.dim || upstream.cols() != tape.values.cols())
        throw ValidationError("upstream gradient shape mismatch");
      const Mat dx = layer_norm_backward(upstream, tape, g);
      auto a = mhca_backward(dx, tape, g);
      r.d_conditioning = a.d_queries.rowwise().sum();
      r.d_keys = std::move(a.d_keys);
      r.d_values = a.d_values + dx;
      break;
    }
    case TapeKind::kJoint: {
      if (upstream.rows() != p.dim || upstream.cols() != 1) throw ValidationError("upstream gradient shape mismatch");
      const Mat dx = layer_norm_backward(upstream, tape, g);
      auto a = mhca_backward(dx, tape, g);
      const Vec w = tape.queries.col(0);
      r.d_conditioning = a.d_queries.col(0) + ffn_backward(dx.col(0), w, tape, g);
      r.d_keys = std::move(a.d_keys);
      r.d_values = std::move(a.d_values);
      break;
    }
    case TapeKind::kDirect: {
      if (upstream.rows() != p.dim || upstream.cols() != 1) throw ValidationError("upstream gradient shape mismatch");
      const Mat dx = layer_norm_backward(upstream, tape, g);
      r.d_conditioning = ffn_backward(dx.col(0), tape.queries.col(0), tape, g);
      break;
    }
  }
  return r;
}

}  // namespace ogen
