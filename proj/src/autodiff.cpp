#include "sml/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace sml::ad {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
MatMap<T> as_mat(std::span<T> data, std::size_t rows, std::size_t cols) {
  return MatMap<T>(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatMap<T> as_mat(std::span<const T> data, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

template <typename T>
void require_rank2(std::string_view op, const BasicTensor<T>& t, std::string_view what) {
  if (t.rank() != 2) shape_error(op, std::string(what) + " must be rank 2, got " + shape_string(t.shape()));
}

constexpr double kNormFloor = 1e-12;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, bool requires_grad)
    : BasicTensor(shape, std::vector<T>(ad::numel(shape), T(0)), requires_grad) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_string(shape));
  if (values.size() != ad::numel(shape))
    throw std::invalid_argument("tensor of shape " + shape_string(shape) + " given " +
                                std::to_string(values.size()) + " values");
  storage_ = std::make_shared<Storage>();
  storage_->shape = std::move(shape);
  storage_->values = std::move(values);
  storage_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  return rank() == 2 ? shape()[0] : 1;
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  if (rank() == 2) return shape()[1];
  return rank() == 1 ? shape()[0] : 1;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape()));
  return storage_->values[0];
}

template <typename T>
std::span<T> BasicTensor<T>::grad() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->values.size(), T(0));
  return storage_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(shape(), storage_->values, requires_grad());
}

// ---------------------------------------------------------------------------
// BasicTape

template <typename T>
void BasicTape<T>::record(std::string_view op, std::initializer_list<Tensor> inputs, Tensor& output,
                          std::function<void()> backward) {
  record(op, std::span<const Tensor>(inputs.begin(), inputs.size()), output, std::move(backward));
}

template <typename T>
void BasicTape<T>::record(std::string_view op, std::span<const Tensor> inputs, Tensor& output,
                          std::function<void()> backward) {
  if (!recording_) return;
  bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needed) return;
  output.set_requires_grad(true);
  nodes_.push_back({op, output, std::move(backward)});
}

template <typename T>
void BasicTape<T>::backward(Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(), [&](const Node& n) { return n.output.same_as(loss); });
  if (it == nodes_.rend()) throw std::invalid_argument("backward: loss was not recorded on this tape");
  loss.grad()[0] = T(1);
  for (; it != nodes_.rend(); ++it)
    if (it->output.has_grad()) it->backward();
}

template <typename T>
std::vector<std::string_view> BasicTape<T>::ops() const {
  std::vector<std::string_view> out;
  for (const auto& n : nodes_) out.push_back(n.op);
  return out;
}

// ---------------------------------------------------------------------------
// Primitives

template <typename T>
BasicTensor<T> embedding_lookup(BasicTape<T>& tape, const BasicTensor<T>& table, std::span<const std::int32_t> indices) {
  require_rank2("embedding_lookup", table, "table");
  if (indices.empty()) shape_error("embedding_lookup", "no indices");
  const std::size_t vocab = table.rows(), dim = table.cols();
  for (auto i : indices)
    if (i < 0 || static_cast<std::size_t>(i) >= vocab)
      throw std::out_of_range("embedding_lookup: index " + std::to_string(i) + " outside [0, " +
                              std::to_string(vocab) + ")");

  BasicTensor<T> out({indices.size(), dim});
  auto src = table.values();
  auto dst = out.values();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(indices[r]) * dim), dim,
                dst.begin() + static_cast<std::ptrdiff_t>(r * dim));

  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  tape.record("embedding_lookup", {table}, out, [table, out, idx = std::move(idx), dim]() mutable {
    if (!table.requires_grad()) return;
    auto g = out.grad();
    auto gt = table.grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t base = static_cast<std::size_t>(idx[r]) * dim;
      for (std::size_t c = 0; c < dim; ++c) gt[base + c] += g[r * dim + c];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> dense(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias, Activation activation) {
  require_rank2("dense", weight, "weight");
  if (x.rank() > 2) shape_error("dense", "input must be rank 1 or 2");
  const std::size_t n = x.rows(), p = x.cols(), q = weight.cols();
  if (weight.rows() != p)
    shape_error("dense", "input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  if (bias.numel() != q) shape_error("dense", "bias " + shape_string(bias.shape()) + " vs " + std::to_string(q) + " outputs");

  BasicTensor<T> out(x.rank() == 2 ? Shape{n, q} : Shape{q});
  auto y = as_mat(out.values(), n, q);
  y.noalias() = as_mat(x.values(), n, p) * as_mat(weight.values(), p, q);
  y.rowwise() += as_mat(bias.values(), 1, q).row(0);
  if (activation == Activation::Tanh) y = y.array().tanh().matrix();
  if (activation == Activation::Sigmoid) y = y.unaryExpr([](T v) { return sigmoid(v); });

  tape.record("dense", {x, weight, bias}, out, [x, weight, bias, out, activation, n, p, q]() mutable {
    Mat<T> dz = as_mat(std::span<const T>(out.grad()), n, q);
    auto yv = as_mat(std::span<const T>(out.values()), n, q);
    if (activation == Activation::Tanh) dz.array() *= (T(1) - yv.array().square());
    if (activation == Activation::Sigmoid) dz.array() *= yv.array() * (T(1) - yv.array());
    if (x.requires_grad()) as_mat(x.grad(), n, p).noalias() += dz * as_mat(std::span<const T>(weight.values()), p, q).transpose();
    if (weight.requires_grad())
      as_mat(weight.grad(), p, q).noalias() += as_mat(std::span<const T>(x.values()), n, p).transpose() * dz;
    if (bias.requires_grad()) as_mat(bias.grad(), 1, q) += dz.colwise().sum();
  });
  return out;
}

template <typename T>
BasicTensor<T> seq_pool(BasicTape<T>& tape, const BasicTensor<T>& x, PoolMode mode, std::size_t mask_length) {
  if (x.rank() > 2) shape_error("seq_pool", "input must be rank 1 or 2");
  const std::size_t t = x.rows(), d = x.cols();
  if (mask_length == 0) shape_error("seq_pool", "mask_length must be at least 1");
  if (mask_length > t) shape_error("seq_pool", "mask_length exceeds sequence length");

  BasicTensor<T> out({d});
  auto xv = x.values();
  auto ov = out.values();
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::Max) {
    argmax.assign(d, 0);
    for (std::size_t c = 0; c < d; ++c) {
      T best = xv[c];
      for (std::size_t r = 1; r < mask_length; ++r) {
        if (xv[r * d + c] > best) {
          best = xv[r * d + c];
          argmax[c] = r;
        }
      }
      ov[c] = best;
    }
  } else {
    for (std::size_t r = 0; r < mask_length; ++r)
      for (std::size_t c = 0; c < d; ++c) ov[c] += xv[r * d + c];
    for (auto& v : ov) v /= static_cast<T>(mask_length);
  }

  tape.record("seq_pool", {x}, out, [x, out, mode, mask_length, d, argmax = std::move(argmax)]() mutable {
    if (!x.requires_grad()) return;
    auto g = out.grad();
    auto gx = x.grad();
    if (mode == PoolMode::Max) {
      for (std::size_t c = 0; c < d; ++c) gx[argmax[c] * d + c] += g[c];
    } else {
      const T inv = T(1) / static_cast<T>(mask_length);
      for (std::size_t r = 0; r < mask_length; ++r)
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[c] * inv;
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> conv1d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& filters,
                      const BasicTensor<T>& bias) {
  if (filters.rank() != 3) shape_error("conv1d", "filters must be [k x d_in x d_out]");
  const std::size_t t = x.rows(), d_in = x.cols();
  const std::size_t k = filters.shape()[0], d_out = filters.shape()[2];
  if (filters.shape()[1] != d_in)
    shape_error("conv1d", "input " + shape_string(x.shape()) + " vs filters " + shape_string(filters.shape()));
  if (bias.numel() != d_out) shape_error("conv1d", "bias size mismatch");
  if (t < k) shape_error("conv1d", "sequence length " + std::to_string(t) + " shorter than filter " + std::to_string(k));
  const std::size_t steps = t - k + 1;

  BasicTensor<T> out({steps, d_out});
  auto y = as_mat(out.values(), steps, d_out);
  auto xm = as_mat(x.values(), t, d_in);
  y.rowwise() = as_mat(bias.values(), 1, d_out).row(0);
  for (std::size_t j = 0; j < k; ++j) {
    auto f = as_mat(filters.values().subspan(j * d_in * d_out, d_in * d_out), d_in, d_out);
    y.noalias() += xm.middleRows(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(steps)) * f;
  }

  tape.record("conv1d", {x, filters, bias}, out, [x, filters, bias, out, t, d_in, k, d_out, steps]() mutable {
    auto g = as_mat(std::span<const T>(out.grad()), steps, d_out);
    auto xm = as_mat(std::span<const T>(x.values()), t, d_in);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t off = j * d_in * d_out;
      const auto ej = static_cast<Eigen::Index>(j), es = static_cast<Eigen::Index>(steps);
      if (x.requires_grad()) {
        auto f = as_mat(std::span<const T>(filters.values()).subspan(off, d_in * d_out), d_in, d_out);
        auto gx = as_mat(x.grad(), t, d_in);
        gx.middleRows(ej, es).noalias() += g * f.transpose();
      }
      if (filters.requires_grad())
        as_mat(filters.grad().subspan(off, d_in * d_out), d_in, d_out).noalias() +=
            xm.middleRows(ej, es).transpose() * g;
    }
    if (bias.requires_grad()) as_mat(bias.grad(), 1, d_out) += g.colwise().sum();
  });
  return out;
}

template <typename T>
BasicTensor<T> gru_sequence(BasicTape<T>& tape, const BasicTensor<T>& x, const GruWeights<T>& weights,
                            const BasicTensor<T>& h0) {
  const std::size_t t = x.rows(), d_in = x.cols(), h = weights.hidden_size();
  if (weights.bias.numel() != 3 * h || h == 0) shape_error("gru_sequence", "bias must hold 3 gate blocks");
  if (weights.input.rank() != 2 || weights.input.rows() != d_in || weights.input.cols() != 3 * h)
    shape_error("gru_sequence", "input weights " + shape_string(weights.input.shape()) + " vs input " +
                                    shape_string(x.shape()));
  if (weights.hidden.rank() != 2 || weights.hidden.rows() != h || weights.hidden.cols() != 3 * h)
    shape_error("gru_sequence", "hidden weights must be [h x 3h]");
  if (h0.numel() != h) shape_error("gru_sequence", "h0 size mismatch");

  const auto W = as_mat(weights.input.values(), d_in, 3 * h);
  const auto U = as_mat(weights.hidden.values(), h, 3 * h);
  const auto xm = as_mat(x.values(), t, d_in);
  const auto eh = static_cast<Eigen::Index>(h);

  // Input projections of all steps at once: A = X W + b, [t x 3h].
  Mat<T> pre = xm * W;
  pre.rowwise() += as_mat(weights.bias.values(), 1, 3 * h).row(0);

  Mat<T> states(static_cast<Eigen::Index>(t + 1), eh);  // h_0 .. h_t
  Mat<T> update(static_cast<Eigen::Index>(t), eh), reset(static_cast<Eigen::Index>(t), eh),
      cand(static_cast<Eigen::Index>(t), eh);
  states.row(0) = as_mat(h0.values(), 1, h).row(0);
  for (std::size_t s = 0; s < t; ++s) {
    const auto es = static_cast<Eigen::Index>(s);
    Eigen::Matrix<T, 1, Eigen::Dynamic> hprev = states.row(es);
    Eigen::Matrix<T, 1, Eigen::Dynamic> zr = hprev * U.leftCols(2 * eh);
    zr += pre.row(es).head(2 * eh);
    Eigen::Matrix<T, 1, Eigen::Dynamic> z = zr.head(eh).unaryExpr([](T v) { return sigmoid(v); });
    Eigen::Matrix<T, 1, Eigen::Dynamic> r = zr.tail(eh).unaryExpr([](T v) { return sigmoid(v); });
    Eigen::Matrix<T, 1, Eigen::Dynamic> rh = r.cwiseProduct(hprev);
    Eigen::Matrix<T, 1, Eigen::Dynamic> c = rh * U.rightCols(eh);
    c = (c + pre.row(es).tail(eh)).array().tanh().matrix();
    update.row(es) = z;
    reset.row(es) = r;
    cand.row(es) = c;
    states.row(es + 1) = (T(1) - z.array()).matrix().cwiseProduct(hprev) + z.cwiseProduct(c);
  }

  BasicTensor<T> out({h});
  as_mat(out.values(), 1, h).row(0) = states.row(static_cast<Eigen::Index>(t));

  auto Win = weights.input, Uh = weights.hidden, bias = weights.bias;
  tape.record("gru_sequence", {x, Win, Uh, bias, h0}, out,
              [x, Win, Uh, bias, h0, out, t, d_in, h, states = std::move(states), update = std::move(update),
               reset = std::move(reset), cand = std::move(cand)]() mutable {
                const auto eh = static_cast<Eigen::Index>(h);
                const auto U = as_mat(std::span<const T>(Uh.values()), h, 3 * h);
                Mat<T> dU = Mat<T>::Zero(eh, 3 * eh);
                Mat<T> dpre(static_cast<Eigen::Index>(t), 3 * eh);
                Eigen::Matrix<T, 1, Eigen::Dynamic> dh = as_mat(std::span<const T>(out.grad()), 1, h).row(0);
                for (std::size_t step = t; step-- > 0;) {
                  const auto es = static_cast<Eigen::Index>(step);
                  auto hprev = states.row(es);
                  auto z = update.row(es);
                  auto r = reset.row(es);
                  auto c = cand.row(es);
                  Eigen::Matrix<T, 1, Eigen::Dynamic> dz = dh.cwiseProduct(c - hprev);
                  Eigen::Matrix<T, 1, Eigen::Dynamic> dc_pre =
                      dh.cwiseProduct(z).cwiseProduct((T(1) - c.array().square()).matrix());
                  Eigen::Matrix<T, 1, Eigen::Dynamic> dhprev = dh.cwiseProduct((T(1) - z.array()).matrix());
                  Eigen::Matrix<T, 1, Eigen::Dynamic> rh = r.cwiseProduct(hprev);
                  Eigen::Matrix<T, 1, Eigen::Dynamic> drh = dc_pre * U.rightCols(eh).transpose();
                  dU.rightCols(eh).noalias() += rh.transpose() * dc_pre;
                  Eigen::Matrix<T, 1, Eigen::Dynamic> dr = drh.cwiseProduct(hprev);
                  dhprev += drh.cwiseProduct(r);
                  Eigen::Matrix<T, 1, Eigen::Dynamic> dz_pre =
                      dz.cwiseProduct(z.cwiseProduct((T(1) - z.array()).matrix()));
                  Eigen::Matrix<T, 1, Eigen::Dynamic> dr_pre =
                      dr.cwiseProduct(r.cwiseProduct((T(1) - r.array()).matrix()));
                  dpre.row(es) << dz_pre, dr_pre, dc_pre;
                  dU.leftCols(2 * eh).noalias() += hprev.transpose() * dpre.row(es).head(2 * eh);
                  dhprev.noalias() += dpre.row(es).head(2 * eh) * U.leftCols(2 * eh).transpose();
                  dh = dhprev;
                }
                if (Uh.requires_grad()) as_mat(Uh.grad(), h, 3 * h) += dU;
                if (x.requires_grad())
                  as_mat(x.grad(), t, d_in).noalias() +=
                      dpre * as_mat(std::span<const T>(Win.values()), d_in, 3 * h).transpose();
                if (Win.requires_grad())
                  as_mat(Win.grad(), d_in, 3 * h).noalias() +=
                      as_mat(std::span<const T>(x.values()), t, d_in).transpose() * dpre;
                if (bias.requires_grad()) as_mat(bias.grad(), 1, 3 * h) += dpre.colwise().sum();
                if (h0.requires_grad()) as_mat(h0.grad(), 1, h) += dh;
              });
  return out;
}

template <typename T>
BasicTensor<T> l2_normalize(BasicTape<T>& tape, const BasicTensor<T>& x) {
  if (x.rank() > 2) shape_error("l2_normalize", "input must be rank 1 or 2");
  const std::size_t n = x.rows(), d = x.cols();
  BasicTensor<T> out(x.shape());
  std::vector<T> norms(n);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < n; ++r) {
    T sq = 0;
    for (std::size_t c = 0; c < d; ++c) sq += xv[r * d + c] * xv[r * d + c];
    norms[r] = std::max(std::sqrt(sq), static_cast<T>(kNormFloor));
    for (std::size_t c = 0; c < d; ++c) ov[r * d + c] = xv[r * d + c] / norms[r];
  }

  tape.record("l2_normalize", {x}, out, [x, out, n, d, norms = std::move(norms)]() mutable {
    if (!x.requires_grad()) return;
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.grad();
    for (std::size_t r = 0; r < n; ++r) {
      // (I - y y^T) g / ||x||; below the floor the map is linear x / floor.
      T dot = 0;
      const bool clamped = norms[r] <= static_cast<T>(kNormFloor);
      if (!clamped)
        for (std::size_t c = 0; c < d; ++c) dot += y[r * d + c] * g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += (g[r * d + c] - dot * y[r * d + c]) / norms[r];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> cosine_distance(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape())
    shape_error("cosine_distance", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  if (a.rank() > 2) shape_error("cosine_distance", "inputs must be rank 1 or 2");
  const std::size_t n = a.rows(), d = a.cols();
  BasicTensor<T> out(a.rank() == 2 ? Shape{n} : Shape{});
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < n; ++r) {
    T dot = 0;
    for (std::size_t c = 0; c < d; ++c) dot += av[r * d + c] * bv[r * d + c];
    out.values()[r] = T(1) - dot;
  }
  tape.record("cosine_distance", {a, b}, out, [a, b, out, n, d]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad();
      auto bv = b.values();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) ga[r * d + c] -= g[r] * bv[r * d + c];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      auto av = a.values();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gb[r * d + c] -= g[r] * av[r * d + c];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> cosine_distance_many(BasicTape<T>& tape, const BasicTensor<T>& anchor, const BasicTensor<T>& rows) {
  require_rank2("cosine_distance_many", rows, "rows");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (anchor.numel() != d || anchor.rank() > 1)
    shape_error("cosine_distance_many", "anchor " + shape_string(anchor.shape()) + " vs rows " + shape_string(rows.shape()));
  BasicTensor<T> out({n});
  auto q = as_mat(anchor.values(), 1, d);
  auto m = as_mat(rows.values(), n, d);
  as_mat(out.values(), n, 1) = (T(1) - (m * q.transpose()).array()).matrix();

  tape.record("cosine_distance_many", {anchor, rows}, out, [anchor, rows, out, n, d]() mutable {
    auto g = as_mat(std::span<const T>(out.grad()), n, 1);
    if (anchor.requires_grad())
      as_mat(anchor.grad(), 1, d).noalias() -= g.transpose() * as_mat(std::span<const T>(rows.values()), n, d);
    if (rows.requires_grad())
      as_mat(rows.grad(), n, d).noalias() -= g * as_mat(std::span<const T>(anchor.values()), 1, d);
  });
  return out;
}

template <typename T>
BasicTensor<T> slice_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2("slice_rows", x, "input");
  if (begin >= end || end > x.rows()) shape_error("slice_rows", "bad row range");
  const std::size_t d = x.cols();
  BasicTensor<T> out({end - begin, d});
  auto src = x.values().subspan(begin * d, (end - begin) * d);
  std::copy(src.begin(), src.end(), out.values().begin());
  tape.record("slice_rows", {x}, out, [x, out, begin, d]() mutable {
    if (!x.requires_grad()) return;
    auto g = out.grad();
    auto gx = x.grad().subspan(begin * d, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename T>
BasicTensor<T> left_pad_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t total_rows) {
  if (x.rank() > 2) shape_error("left_pad_rows", "input must be rank 1 or 2");
  const std::size_t t = x.rows(), d = x.cols();
  if (total_rows < t) shape_error("left_pad_rows", "cannot pad to fewer rows");
  const std::size_t pad = total_rows - t;
  BasicTensor<T> out({total_rows, d});
  std::copy(x.values().begin(), x.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(pad * d));
  tape.record("left_pad_rows", {x}, out, [x, out, pad, d]() mutable {
    if (!x.requires_grad()) return;
    auto g = out.grad().subspan(pad * d);
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename T>
BasicTensor<T> concat(BasicTape<T>& tape, std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) shape_error("concat", "nothing to concatenate");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.numel();
  BasicTensor<T> out({total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.numel();
  }
  std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
  tape.record("concat", parts, out, [inputs, out]() mutable {
    auto g = out.grad();
    std::size_t off = 0;
    for (auto& p : inputs) {
      if (p.requires_grad()) {
        auto gp = p.grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      }
      off += p.numel();
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> stack_rows(BasicTape<T>& tape, std::span<const BasicTensor<T>> rows) {
  if (rows.empty()) shape_error("stack_rows", "nothing to stack");
  const std::size_t d = rows.front().numel();
  for (const auto& r : rows)
    if (r.numel() != d) shape_error("stack_rows", "rows differ in size");
  BasicTensor<T> flat = concat(tape, rows);
  // Same buffer layout as the concatenation; reuse its gradient path.
  BasicTensor<T> out({rows.size(), d});
  std::copy(flat.values().begin(), flat.values().end(), out.values().begin());
  tape.record("stack_rows", {flat}, out, [flat, out]() mutable {
    auto g = out.grad();
    auto gf = flat.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gf[i] += g[i];
  });
  return out;
}

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return weighted_sum(tape, x, std::span<const T>{});
}

template <typename T>
BasicTensor<T> weighted_sum(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const T> weights) {
  if (!weights.empty() && weights.size() != x.numel()) shape_error("weighted_sum", "weight count mismatch");
  std::vector<T> w(weights.begin(), weights.end());
  T total = 0;
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) total += (w.empty() ? T(1) : w[i]) * xv[i];
  auto out = BasicTensor<T>::scalar(total);
  tape.record("weighted_sum", {x}, out, [x, out, w = std::move(w)]() mutable {
    if (!x.requires_grad()) return;
    const T g = out.grad()[0];
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (w.empty() ? T(1) : w[i]);
  });
  return out;
}

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
  tape.record("add", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    for (auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->grad();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& x, T factor) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = factor * x.values()[i];
  tape.record("scale", {x}, out, [x, out, factor]() mutable {
    if (!x.requires_grad()) return;
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Parameters and optimizer

template <typename T>
BasicTensor<T> BasicParamSet<T>::add(std::string name, BasicTensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  tensor.set_requires_grad(true);
  const std::size_t n = tensor.numel();
  entries_.push_back({std::move(name), tensor, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
  return tensor;
}

template <typename T>
const BasicTensor<T>& BasicParamSet<T>::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
bool BasicParamSet<T>::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

template <typename T>
std::vector<BasicTensor<T>> BasicParamSet<T>::tensors() const {
  std::vector<BasicTensor<T>> out;
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename T>
std::size_t BasicParamSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
void BasicParamSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
BasicParamSet<T> BasicParamSet<T>::clone() const {
  BasicParamSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone());
  return out;
}

template <typename T>
void adam_step(BasicParamSet<T>& params, const AdamConfig& config) {
  const auto step = static_cast<double>(params.advance_step());
  const double correction1 = 1.0 - std::pow(config.beta1, step);
  const double correction2 = 1.0 - std::pow(config.beta2, step);
  for (auto& e : params.entries()) {
    if (!e.tensor.has_grad()) continue;
    auto w = e.tensor.values();
    auto g = e.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double m = config.beta1 * static_cast<double>(e.first_moment[i]) + (1.0 - config.beta1) * gi;
      const double v = config.beta2 * static_cast<double>(e.second_moment[i]) + (1.0 - config.beta2) * gi * gi;
      e.first_moment[i] = static_cast<T>(m);
      e.second_moment[i] = static_cast<T>(v);
      const double update = config.lr * (m / correction1) / (std::sqrt(v / correction2) + config.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
    e.tensor.zero_grad();
  }
}

double grad_check(const std::function<BasicTensor<double>(BasicTape<double>&)>& loss_fn,
                  std::span<const BasicTensor<double>> params, double h) {
  std::vector<BasicTensor<double>> ps(params.begin(), params.end());
  for (auto& p : ps) {
    p.set_requires_grad(true);
    p.grad();
    p.zero_grad();
  }
  {
    BasicTape<double> tape;
    auto loss = loss_fn(tape);
    if (loss.requires_grad()) tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& p : ps) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      auto inference = BasicTape<double>::inference();
      const double up = loss_fn(inference).item();
      values[i] = original - h;
      const double down = loss_fn(inference).item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    p.zero_grad();
  }
  return worst;
}

// ---------------------------------------------------------------------------

#define SML_INSTANTIATE(T)                                                                                          \
  template class BasicTensor<T>;                                                                                    \
  template class BasicTape<T>;                                                                                      \
  template class BasicParamSet<T>;                                                                                  \
  template BasicTensor<T> embedding_lookup(BasicTape<T>&, const BasicTensor<T>&, std::span<const std::int32_t>);    \
  template BasicTensor<T> dense(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                Activation);                                                                        \
  template BasicTensor<T> seq_pool(BasicTape<T>&, const BasicTensor<T>&, PoolMode, std::size_t);                    \
  template BasicTensor<T> conv1d(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> gru_sequence(BasicTape<T>&, const BasicTensor<T>&, const GruWeights<T>&,                  \
                                       const BasicTensor<T>&);                                                      \
  template BasicTensor<T> l2_normalize(BasicTape<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> cosine_distance(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> cosine_distance_many(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> slice_rows(BasicTape<T>&, const BasicTensor<T>&, std::size_t, std::size_t);               \
  template BasicTensor<T> left_pad_rows(BasicTape<T>&, const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> concat(BasicTape<T>&, std::span<const BasicTensor<T>>);                                   \
  template BasicTensor<T> stack_rows(BasicTape<T>&, std::span<const BasicTensor<T>>);                               \
  template BasicTensor<T> sum(BasicTape<T>&, const BasicTensor<T>&);                                                \
  template BasicTensor<T> weighted_sum(BasicTape<T>&, const BasicTensor<T>&, std::span<const T>);                   \
  template BasicTensor<T> add(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> scale(BasicTape<T>&, const BasicTensor<T>&, T);                                           \
  template void adam_step(BasicParamSet<T>&, const AdamConfig&);

SML_INSTANTIATE(float)
SML_INSTANTIATE(double)

#undef SML_INSTANTIATE

}  // namespace sml::ad
