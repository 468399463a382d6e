#pragma once

// Minimal reverse-mode autodiff: dense row-major tensors, a tape of
// backward closures and the handful of fused primitives the session and
// item encoders need. Every template is explicitly instantiated for float
// (training) and double (finite-difference checking) in autodiff.cpp.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sml::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Shared handle to a dense buffer plus an optional gradient buffer.
/// Copies alias the same storage; use clone() for a deep copy.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(Shape shape, bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t numel() const { return storage_->values.size(); }
  // Rank-0 and rank-1 tensors act as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> values() { return storage_->values; }
  std::span<const T> values() const { return storage_->values; }
  T item() const;

  bool has_grad() const { return !storage_->grad.empty(); }
  // Allocates a zero gradient on first access. The handle is shallow, so
  // this is const like any other shared_ptr access.
  std::span<T> grad() const;
  void zero_grad();
  void drop_grad() { storage_->grad.clear(); }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool on) { storage_->requires_grad = on; }

  BasicTensor clone() const;
  template <typename U>
  BasicTensor<U> cast() const;

  bool same_as(const BasicTensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> v(values().begin(), values().end());
  return BasicTensor<U>(shape(), std::move(v), requires_grad());
}

/// Records backward closures in execution order. A non-recording tape
/// (inference) evaluates the same primitives without keeping any history.
template <typename T>
class BasicTape {
 public:
  using Tensor = BasicTensor<T>;

  BasicTape() = default;
  static BasicTape inference() {
    BasicTape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Registers `output` as produced from `inputs`. Nothing is recorded when
  /// the tape is not recording or no input requires a gradient; otherwise
  /// the output is marked as requiring a gradient.
  void record(std::string_view op, std::initializer_list<Tensor> inputs, Tensor& output,
              std::function<void()> backward);
  void record(std::string_view op, std::span<const Tensor> inputs, Tensor& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every closure recorded up to the
  /// loss node in reverse order. Gradients accumulate.
  void backward(Tensor& loss);

  std::vector<std::string_view> ops() const;

 private:
  struct Node {
    std::string_view op;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
};

enum class Activation { None, Tanh, Sigmoid };
enum class PoolMode { Max, Mean };

/// Packed GRU weights; gate blocks are laid out as [update | reset | candidate].
template <typename T>
struct GruWeights {
  BasicTensor<T> input;   // [d_in x 3*d_h]
  BasicTensor<T> hidden;  // [d_h x 3*d_h]
  BasicTensor<T> bias;    // [3*d_h]

  std::size_t hidden_size() const { return bias.numel() / 3; }
};

/// Row gather: out[r] = table[indices[r]]. Works on any rank-2 tensor.
template <typename T>
BasicTensor<T> embedding_lookup(BasicTape<T>& tape, const BasicTensor<T>& table, std::span<const std::int32_t> indices);

/// act(x W + b); x is [n x p] or [p], W is [p x q], b is [q].
template <typename T>
BasicTensor<T> dense(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias, Activation activation);

/// Per-column max or mean over the first `mask_length` rows of x [t x d].
template <typename T>
BasicTensor<T> seq_pool(BasicTape<T>& tape, const BasicTensor<T>& x, PoolMode mode, std::size_t mask_length);

/// Valid 1-D convolution over time: x [t x d_in], filters [k x d_in x d_out].
template <typename T>
BasicTensor<T> conv1d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& filters,
                      const BasicTensor<T>& bias);

/// Runs a GRU over x [t x d_in] from h0 and returns the last hidden state.
template <typename T>
BasicTensor<T> gru_sequence(BasicTape<T>& tape, const BasicTensor<T>& x, const GruWeights<T>& weights,
                            const BasicTensor<T>& h0);

/// Row-wise x / max(||x||, 1e-12).
template <typename T>
BasicTensor<T> l2_normalize(BasicTape<T>& tape, const BasicTensor<T>& x);

/// 1 - a.b for [d] inputs (scalar result) or row-wise for [n x d] inputs ([n]).
template <typename T>
BasicTensor<T> cosine_distance(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// 1 - anchor.row for every row of rows [n x d]; anchor is [d]. Result [n].
template <typename T>
BasicTensor<T> cosine_distance_many(BasicTape<T>& tape, const BasicTensor<T>& anchor, const BasicTensor<T>& rows);

template <typename T>
BasicTensor<T> slice_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin, std::size_t end);

/// Prepends zero rows so the result has `total_rows` rows.
template <typename T>
BasicTensor<T> left_pad_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t total_rows);

/// Concatenates vectors end to end.
template <typename T>
BasicTensor<T> concat(BasicTape<T>& tape, std::span<const BasicTensor<T>> parts);

/// Stacks equally sized vectors as the rows of a matrix.
template <typename T>
BasicTensor<T> stack_rows(BasicTape<T>& tape, std::span<const BasicTensor<T>> rows);

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x);

/// sum_i weights[i] * x[i]; an empty weight span means all ones.
template <typename T>
BasicTensor<T> weighted_sum(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const T> weights);

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& x, T factor);

// ---------------------------------------------------------------------------

/// Named trainable tensors plus their Adam moment buffers. The step counter
/// is shared by every parameter.
template <typename T>
class BasicParamSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
    std::vector<T> first_moment;
    std::vector<T> second_moment;
  };

  BasicTensor<T> add(std::string name, BasicTensor<T> tensor);
  const BasicTensor<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }
  std::vector<BasicTensor<T>> tensors() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  std::uint64_t step() const { return step_; }
  std::uint64_t advance_step() { return ++step_; }
  void zero_grad();
  /// Deep copy of the tensors with fresh optimizer state.
  BasicParamSet clone() const;

 private:
  std::vector<Entry> entries_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter that holds a gradient,
/// then zeroes all gradients.
template <typename T>
void adam_step(BasicParamSet<T>& params, const AdamConfig& config);

/// Compares tape gradients of `loss_fn` against central differences with
/// step h, evaluated in double precision. Returns the maximum over all
/// parameter entries of |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<BasicTensor<double>(BasicTape<double>&)>& loss_fn,
                  std::span<const BasicTensor<double>> params, double h = 1e-3);

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;
using ParamSet = BasicParamSet<float>;

}  // namespace sml::ad
