#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rrwave/errors.hpp"
#include "rrwave/rng.hpp"

namespace rrwave {

// Dense shape of rank 1..3. Rank-3 tensors are (batch, length, channels),
// row-major with channels fastest.
class Shape {
 public:
  Shape() = default;
  explicit Shape(int64_t a) : rank_(1), d_{a, 1, 1} {}
  Shape(int64_t a, int64_t b) : rank_(2), d_{a, b, 1} {}
  Shape(int64_t a, int64_t b, int64_t c) : rank_(3), d_{a, b, c} {}

  int rank() const { return rank_; }
  int64_t operator[](int i) const { return d_[static_cast<size_t>(i)]; }
  int64_t numel() const { return rank_ == 0 ? 0 : d_[0] * d_[1] * d_[2]; }
  bool operator==(const Shape& o) const { return rank_ == o.rank_ && d_ == o.d_; }
  std::string str() const;

 private:
  int rank_ = 0;
  std::array<int64_t, 3> d_{0, 0, 0};
};

struct TensorData {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;  // allocated on demand during backward
  bool requires_grad = false;
  int node = -1;          // producing node on the recording tape, -1 for leaves
  uint64_t tape_id = 0;   // tape that produced it, 0 for leaves

  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), 0.0);
  }
};

// Value-semantics handle to shared tensor storage.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData>()) {}
  explicit Tensor(Shape s, double fill = 0.0, bool requires_grad = false)
      : d_(std::make_shared<TensorData>()) {
    d_->shape = s;
    d_->v.assign(static_cast<size_t>(s.numel()), fill);
    d_->requires_grad = requires_grad;
  }

  static Tensor from(Shape s, std::vector<double> values, bool requires_grad = false);
  static Tensor uniform(Shape s, double lo, double hi, Rng& rng, bool requires_grad = false);

  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return d_->shape.numel(); }
  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool r) { d_->requires_grad = r; }

  std::span<double> data() { return d_->v; }
  std::span<const double> data() const { return d_->v; }
  std::span<double> grad() { return d_->g; }
  std::span<const double> grad() const { return d_->g; }
  bool has_grad() const { return !d_->g.empty(); }
  void zero_grad() { std::fill(d_->g.begin(), d_->g.end(), 0.0); }

  double scalar() const {
    require(numel() == 1, Err::ShapeMismatch, "scalar() on non-scalar tensor");
    return d_->v[0];
  }

  // Rank-3 accessor (b, l, c); rank-2 (b, f) via c index 0 conventions below.
  double& at(int64_t b, int64_t l, int64_t c) {
    return d_->v[static_cast<size_t>((b * d_->shape[1] + l) * d_->shape[2] + c)];
  }
  double at(int64_t b, int64_t l, int64_t c) const {
    return d_->v[static_cast<size_t>((b * d_->shape[1] + l) * d_->shape[2] + c)];
  }

  Tensor detached_copy() const;

  std::shared_ptr<TensorData> ptr() const { return d_; }
  TensorData* raw() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Records primitive applications in execution order;
// backward() replays reachable nodes in reverse.
class Tape {
 public:
  Tape();

  int record(std::vector<int> parents, const std::shared_ptr<TensorData>& out,
             std::function<void()> pull);

  // Seeds d(loss)/d(loss) = 1 and pulls gradients back to every reachable
  // tensor with requires_grad. The loss must be a scalar produced by this
  // tape, otherwise DisconnectedGraph. Intermediate values are released as
  // the sweep consumes them: read any forward outputs you need before
  // calling backward, and call it at most once per recorded graph.
  void backward(const Tensor& loss);

  void clear();
  size_t num_nodes() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

 private:
  struct Node {
    std::vector<int> parents;
    std::shared_ptr<TensorData> out;
    std::function<void()> pull;
  };
  uint64_t id_;
  std::vector<Node> nodes_;
};

enum class Padding { kValid, kSame };
enum class BnMode { kTrain, kInfer };

// Primitive ops. `tape` may be null for pure inference; gradients are then
// neither recorded nor required.
Tensor conv1d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              Padding padding);
Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, BnMode mode, double momentum = 0.1,
                  double eps = 1e-5);
Tensor relu(Tape* tape, const Tensor& x);
Tensor max_pool1d(Tape* tape, const Tensor& x, int k, int stride);
Tensor global_avg_pool(Tape* tape, const Tensor& x);
Tensor dense(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor concat_channels(Tape* tape, std::span<const Tensor> xs);
Tensor mse_loss(Tape* tape, const Tensor& pred, const Tensor& target);
Tensor reduce_sum(Tape* tape, const Tensor& x);

// Output length of a 1-D convolution/pool: floor((l + pad - k)/stride) + 1.
int64_t conv_out_len(int64_t l, int64_t k, int64_t stride, int64_t pad_total);
// TF-style `same` padding: output length ceil(l/stride); extra pad on the right.
std::pair<int64_t, int64_t> same_padding(int64_t l, int64_t k, int64_t stride);

}  // namespace rrwave
