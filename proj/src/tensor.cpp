#include "rrwave/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "rrwave/gemm.hpp"
#include "rrwave/parallel.hpp"

namespace rrwave {

namespace {

std::atomic<uint64_t> g_tape_counter{0};

bool on_tape(const TensorData* td, uint64_t tape_id) {
  return td->node >= 0 && td->tape_id == tape_id;
}

bool wants_grad(const TensorData* td, uint64_t tape_id) {
  return td->requires_grad || on_tape(td, tape_id);
}

// Gradients are accumulated only into tensors that are reachable parts of the
// graph; inputs that neither require grad nor sit on the tape are skipped.
bool should_record(Tape* tape, std::initializer_list<const TensorData*> inputs) {
  if (!tape) return false;
  for (const auto* td : inputs)
    if (wants_grad(td, tape->id())) return true;
  return false;
}

int parent_id(const TensorData* td, uint64_t tape_id) {
  return on_tape(td, tape_id) ? td->node : -1;
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < rank_; ++i) os << (i ? ", " : "") << d_[static_cast<size_t>(i)];
  os << ")";
  return os.str();
}

Tensor Tensor::from(Shape s, std::vector<double> values, bool requires_grad) {
  require(static_cast<int64_t>(values.size()) == s.numel(), Err::ShapeMismatch,
          "value count " + std::to_string(values.size()) + " != shape " + s.str());
  Tensor t;
  t.d_->shape = s;
  t.d_->v = std::move(values);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::uniform(Shape s, double lo, double hi, Rng& rng, bool requires_grad) {
  Tensor t(s, 0.0, requires_grad);
  for (auto& x : t.d_->v) x = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::detached_copy() const {
  Tensor t;
  t.d_->shape = d_->shape;
  t.d_->v = d_->v;
  t.d_->requires_grad = false;
  return t;
}

Tape::Tape() : id_(++g_tape_counter) {}

int Tape::record(std::vector<int> parents, const std::shared_ptr<TensorData>& out,
                 std::function<void()> pull) {
  out->node = static_cast<int>(nodes_.size());
  out->tape_id = id_;
  nodes_.push_back(Node{std::move(parents), out, std::move(pull)});
  return out->node;
}

void Tape::backward(const Tensor& loss) {
  require(loss.numel() == 1, Err::ShapeMismatch, "backward root must be scalar");
  const TensorData* root = loss.raw();
  if (!on_tape(root, id_))
    raise(Err::DisconnectedGraph, "backward root was not produced by this tape");
  require(!nodes_.empty() && nodes_[static_cast<size_t>(root->node)].pull != nullptr,
          Err::Precondition, "tape already consumed by a previous backward");

  // Mark ancestors of the root.
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<int> stack{root->node};
  reach[static_cast<size_t>(root->node)] = 1;
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    for (int p : nodes_[static_cast<size_t>(n)].parents)
      if (p >= 0 && !reach[static_cast<size_t>(p)]) {
        reach[static_cast<size_t>(p)] = 1;
        stack.push_back(p);
      }
  }

  loss.raw()->ensure_grad();
  loss.raw()->g[0] = 1.0;

  // Reverse sweep. Consumed intermediates are released as soon as their pull
  // ran; peak memory stays near the live frontier instead of the whole graph.
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& node = nodes_[static_cast<size_t>(i)];
    if (!reach[static_cast<size_t>(i)]) continue;
    if (node.pull) node.pull();
    node.pull = nullptr;
    std::vector<double>().swap(node.out->v);
    std::vector<double>().swap(node.out->g);
  }
}

void Tape::clear() { nodes_.clear(); }

int64_t conv_out_len(int64_t l, int64_t k, int64_t stride, int64_t pad_total) {
  return (l + pad_total - k) / stride + 1;
}

std::pair<int64_t, int64_t> same_padding(int64_t l, int64_t k, int64_t stride) {
  const int64_t out = (l + stride - 1) / stride;
  const int64_t total = std::max<int64_t>(0, (out - 1) * stride + k - l);
  return {total / 2, total - total / 2};
}

// ---------------------------------------------------------------------------
// conv1d

namespace {

struct ConvPlan {
  int64_t b, l, cin, k, cout, lp, stride, pad_left;
  bool fast;  // stride-1 GEMM path
};

// Stride-1 row range of the output for kernel tap `k`; input row = out + shift.
struct TapRange {
  int64_t lo, hi, shift;
};

TapRange tap_range(const ConvPlan& p, int64_t k) {
  const int64_t shift = k - p.pad_left;
  return {std::max<int64_t>(0, -shift), std::min(p.lp, p.l - shift), shift};
}

void conv_forward_fast(const ConvPlan& p, const double* x, const double* w, const double* bias,
                       double* y) {
  parallel_for(p.b * p.lp, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      double* row = y + r * p.cout;
      for (int64_t c = 0; c < p.cout; ++c) row[c] = bias[c];
    }
  });
  for (int64_t k = 0; k < p.k; ++k) {
    const auto t = tap_range(p, k);
    if (t.lo >= t.hi) continue;
    const double* wk = w + k * p.cin * p.cout;
    if (p.b > 1) {
      parallel_for(p.b, [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b)
          gemm(x + (b * p.l + t.lo + t.shift) * p.cin, wk, y + (b * p.lp + t.lo) * p.cout,
               t.hi - t.lo, p.cin, p.cout, true, p.cin, p.cout, p.cout, 1);
      });
    } else {
      gemm(x + (t.lo + t.shift) * p.cin, wk, y + t.lo * p.cout, t.hi - t.lo, p.cin, p.cout, true,
           p.cin, p.cout, p.cout);
    }
  }
}

void conv_forward_naive(const ConvPlan& p, const double* x, const double* w, const double* bias,
                        double* y) {
  parallel_for(p.b, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b)
      for (int64_t lp = 0; lp < p.lp; ++lp) {
        double* out = y + (b * p.lp + lp) * p.cout;
        for (int64_t c = 0; c < p.cout; ++c) out[c] = bias[c];
        for (int64_t k = 0; k < p.k; ++k) {
          const int64_t li = lp * p.stride + k - p.pad_left;
          if (li < 0 || li >= p.l) continue;
          const double* xin = x + (b * p.l + li) * p.cin;
          const double* wk = w + k * p.cin * p.cout;
          for (int64_t ci = 0; ci < p.cin; ++ci) {
            const double xv = xin[ci];
            const double* wrow = wk + ci * p.cout;
            for (int64_t c = 0; c < p.cout; ++c) out[c] += xv * wrow[c];
          }
        }
      }
  });
}

void conv_backward(const ConvPlan& p, const double* x, const double* w, const double* gy,
                   double* gx, double* gw, double* gb) {
  if (gb) {
    for (int64_t r = 0; r < p.b * p.lp; ++r) {
      const double* row = gy + r * p.cout;
      for (int64_t c = 0; c < p.cout; ++c) gb[c] += row[c];
    }
  }
  if (p.fast) {
    if (gw) {
      std::vector<double> xt(static_cast<size_t>(p.cin) * p.lp);
      for (int64_t k = 0; k < p.k; ++k) {
        const auto t = tap_range(p, k);
        if (t.lo >= t.hi) continue;
        double* gwk = gw + k * p.cin * p.cout;
        for (int64_t b = 0; b < p.b; ++b) {
          transpose(x + (b * p.l + t.lo + t.shift) * p.cin, xt.data(), t.hi - t.lo, p.cin, p.cin,
                    t.hi - t.lo);
          gemm(xt.data(), gy + (b * p.lp + t.lo) * p.cout, gwk, p.cin, t.hi - t.lo, p.cout, true,
               t.hi - t.lo, p.cout, p.cout);
        }
      }
    }
    if (gx) {
      std::vector<double> wt(static_cast<size_t>(p.cout) * p.cin);
      for (int64_t k = 0; k < p.k; ++k) {
        const auto t = tap_range(p, k);
        if (t.lo >= t.hi) continue;
        transpose(w + k * p.cin * p.cout, wt.data(), p.cin, p.cout);
        if (p.b > 1) {
          parallel_for(p.b, [&](int64_t b0, int64_t b1) {
            for (int64_t b = b0; b < b1; ++b)
              gemm(gy + (b * p.lp + t.lo) * p.cout, wt.data(), gx + (b * p.l + t.lo + t.shift) * p.cin,
                   t.hi - t.lo, p.cout, p.cin, true, p.cout, p.cin, p.cin, 1);
          });
        } else {
          gemm(gy + t.lo * p.cout, wt.data(), gx + (t.lo + t.shift) * p.cin, t.hi - t.lo, p.cout,
               p.cin, true, p.cout, p.cin, p.cin);
        }
      }
    }
  } else {
    for (int64_t b = 0; b < p.b; ++b)
      for (int64_t lp = 0; lp < p.lp; ++lp) {
        const double* gout = gy + (b * p.lp + lp) * p.cout;
        for (int64_t k = 0; k < p.k; ++k) {
          const int64_t li = lp * p.stride + k - p.pad_left;
          if (li < 0 || li >= p.l) continue;
          for (int64_t ci = 0; ci < p.cin; ++ci) {
            const double xv = x[(b * p.l + li) * p.cin + ci];
            for (int64_t c = 0; c < p.cout; ++c) {
              const double g = gout[c];
              if (gw) gw[(k * p.cin + ci) * p.cout + c] += xv * g;
              if (gx) gx[(b * p.l + li) * p.cin + ci] += w[(k * p.cin + ci) * p.cout + c] * g;
            }
          }
        }
      }
  }
}

}  // namespace

Tensor conv1d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              Padding padding) {
  require(x.shape().rank() == 3, Err::ShapeMismatch, "conv1d input must be rank 3, got " + x.shape().str());
  require(w.shape().rank() == 3, Err::ShapeMismatch, "conv1d kernel must be rank 3, got " + w.shape().str());
  require(stride >= 1, Err::ShapeMismatch, "conv1d stride must be >= 1");
  ConvPlan p;
  p.b = x.shape()[0];
  p.l = x.shape()[1];
  p.cin = x.shape()[2];
  p.k = w.shape()[0];
  p.cout = w.shape()[2];
  p.stride = stride;
  require(w.shape()[1] == p.cin, Err::ShapeMismatch,
          "kernel cin " + std::to_string(w.shape()[1]) + " != input channels " + std::to_string(p.cin));
  require(bias.shape().rank() == 1 && bias.shape()[0] == p.cout, Err::ShapeMismatch,
          "bias shape " + bias.shape().str() + " != (cout)");
  int64_t pad_total = 0;
  p.pad_left = 0;
  if (padding == Padding::kSame) {
    auto [pl, pr] = same_padding(p.l, p.k, stride);
    p.pad_left = pl;
    pad_total = pl + pr;
  }
  require(p.k <= p.l + pad_total, Err::ShapeMismatch, "kernel longer than padded input");
  p.lp = conv_out_len(p.l, p.k, stride, pad_total);
  p.fast = stride == 1 && p.cin * p.cout >= 64;

  Tensor y(Shape(p.b, p.lp, p.cout));
  if (p.fast)
    conv_forward_fast(p, x.data().data(), w.data().data(), bias.data().data(), y.data().data());
  else
    conv_forward_naive(p, x.data().data(), w.data().data(), bias.data().data(), y.data().data());

  if (should_record(tape, {x.raw(), w.raw(), bias.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto wd = w.ptr(); auto bd = bias.ptr(); auto yd = y.ptr();
    tape->record({parent_id(xd.get(), tid), parent_id(wd.get(), tid), parent_id(bd.get(), tid)},
                 yd, [p, xd, wd, bd, yd, tid]() {
                   if (yd->g.empty()) return;
                   const bool nx = wants_grad(xd.get(), tid);
                   const bool nw = wants_grad(wd.get(), tid);
                   const bool nb = wants_grad(bd.get(), tid);
                   if (nx) xd->ensure_grad();
                   if (nw) wd->ensure_grad();
                   if (nb) bd->ensure_grad();
                   conv_backward(p, xd->v.data(), wd->v.data(), yd->g.data(),
                                 nx ? xd->g.data() : nullptr, nw ? wd->g.data() : nullptr,
                                 nb ? bd->g.data() : nullptr);
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// batch_norm

Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, BnMode mode, double momentum,
                  double eps) {
  require(x.shape().rank() == 3, Err::ShapeMismatch, "batch_norm input must be rank 3");
  const int64_t b = x.shape()[0], l = x.shape()[1], c = x.shape()[2];
  const Tensor* chans[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor* t : chans)
    require(t->shape().rank() == 1 && t->shape()[0] == c, Err::ShapeMismatch,
            "batch_norm parameter shape mismatch for " + std::to_string(c) + " channels");
  const int64_t n = b * l;

  Tensor y(x.shape());
  // Saved for backward: normalized activations and 1/sqrt(var+eps) per channel.
  auto xhat = std::make_shared<std::vector<double>>();
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  xhat->resize(static_cast<size_t>(x.numel()));

  const double* xp = x.data().data();
  double* yp = y.data().data();
  const double* gp = gamma.data().data();
  const double* bp = beta.data().data();

  if (mode == BnMode::kTrain) {
    double* rm = running_mean.data().data();
    double* rv = running_var.data().data();
    parallel_for(c, [&](int64_t c0, int64_t c1) {
      for (int64_t ch = c0; ch < c1; ++ch) {
        double sum = 0.0;
        for (int64_t r = 0; r < n; ++r) sum += xp[r * c + ch];
        const double mean = sum / static_cast<double>(n);
        double varsum = 0.0;
        for (int64_t r = 0; r < n; ++r) {
          const double d = xp[r * c + ch] - mean;
          varsum += d * d;
        }
        const double var = varsum / static_cast<double>(n);  // biased, used for normalization
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(ch)] = is;
        for (int64_t r = 0; r < n; ++r) {
          const double xh = (xp[r * c + ch] - mean) * is;
          (*xhat)[static_cast<size_t>(r * c + ch)] = xh;
          yp[r * c + ch] = gp[ch] * xh + bp[ch];
        }
        rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean;
        rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var;
      }
    });
  } else {
    const double* rm = running_mean.data().data();
    const double* rv = running_var.data().data();
    parallel_for(c, [&](int64_t c0, int64_t c1) {
      for (int64_t ch = c0; ch < c1; ++ch) {
        const double is = 1.0 / std::sqrt(rv[ch] + eps);
        (*inv_std)[static_cast<size_t>(ch)] = is;
        for (int64_t r = 0; r < n; ++r) {
          const double xh = (xp[r * c + ch] - rm[ch]) * is;
          (*xhat)[static_cast<size_t>(r * c + ch)] = xh;
          yp[r * c + ch] = gp[ch] * xh + bp[ch];
        }
      }
    });
  }

  if (should_record(tape, {x.raw(), gamma.raw(), beta.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto gd = gamma.ptr(); auto bd = beta.ptr(); auto yd = y.ptr();
    const bool train = mode == BnMode::kTrain;
    tape->record(
        {parent_id(xd.get(), tid), parent_id(gd.get(), tid), parent_id(bd.get(), tid)}, yd,
        [xd, gd, bd, yd, xhat, inv_std, tid, n, c, train]() {
          if (yd->g.empty()) return;
          const double* gy = yd->g.data();
          const bool nx = wants_grad(xd.get(), tid);
          const bool ng = wants_grad(gd.get(), tid);
          const bool nb = wants_grad(bd.get(), tid);
          if (nx) xd->ensure_grad();
          if (ng) gd->ensure_grad();
          if (nb) bd->ensure_grad();
          parallel_for(c, [&](int64_t c0, int64_t c1) {
            for (int64_t ch = c0; ch < c1; ++ch) {
              double sum_gy = 0.0, sum_gy_xh = 0.0;
              for (int64_t r = 0; r < n; ++r) {
                const double g = gy[r * c + ch];
                sum_gy += g;
                sum_gy_xh += g * (*xhat)[static_cast<size_t>(r * c + ch)];
              }
              if (ng) gd->g[static_cast<size_t>(ch)] += sum_gy_xh;
              if (nb) bd->g[static_cast<size_t>(ch)] += sum_gy;
              if (!nx) continue;
              const double gam = gd->v[static_cast<size_t>(ch)];
              const double is = (*inv_std)[static_cast<size_t>(ch)];
              if (train) {
                const double inv_n = 1.0 / static_cast<double>(n);
                for (int64_t r = 0; r < n; ++r) {
                  const double xh = (*xhat)[static_cast<size_t>(r * c + ch)];
                  xd->g[static_cast<size_t>(r * c + ch)] +=
                      gam * is * inv_n *
                      (static_cast<double>(n) * gy[r * c + ch] - sum_gy - xh * sum_gy_xh);
                }
              } else {
                for (int64_t r = 0; r < n; ++r)
                  xd->g[static_cast<size_t>(r * c + ch)] += gam * is * gy[r * c + ch];
              }
            }
          });
        });
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise / pooling / dense

Tensor relu(Tape* tape, const Tensor& x) {
  Tensor y(x.shape());
  const auto xin = x.data();
  auto out = y.data();
  for (size_t i = 0; i < xin.size(); ++i) out[i] = xin[i] > 0.0 ? xin[i] : 0.0;
  if (should_record(tape, {x.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto yd = y.ptr();
    tape->record({parent_id(xd.get(), tid)}, yd, [xd, yd, tid]() {
      if (yd->g.empty() || !wants_grad(xd.get(), tid)) return;
      xd->ensure_grad();
      // y values may already be freed by the sweep; mask from x instead.
      for (size_t i = 0; i < xd->v.size(); ++i)
        if (xd->v[i] > 0.0) xd->g[i] += yd->g[i];
    });
  }
  return y;
}

Tensor max_pool1d(Tape* tape, const Tensor& x, int k, int stride) {
  require(x.shape().rank() == 3, Err::ShapeMismatch, "max_pool1d input must be rank 3");
  require(k >= 1 && stride >= 1, Err::ShapeMismatch, "max_pool1d k and stride must be >= 1");
  const int64_t b = x.shape()[0], l = x.shape()[1], c = x.shape()[2];
  require(k <= l, Err::ShapeMismatch, "pool window longer than input");
  const int64_t lp = conv_out_len(l, k, stride, 0);
  Tensor y(Shape(b, lp, c));
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(y.numel()));
  const double* xp = x.data().data();
  double* yp = y.data().data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t lo = 0; lo < lp; ++lo)
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t base = lo * stride;
        int64_t best = base;
        double bv = xp[(bi * l + base) * c + ch];
        for (int64_t j = 1; j < k; ++j) {
          const double v = xp[(bi * l + base + j) * c + ch];
          if (v > bv) {  // strict: ties keep the earliest index
            bv = v;
            best = base + j;
          }
        }
        yp[(bi * lp + lo) * c + ch] = bv;
        (*argmax)[static_cast<size_t>((bi * lp + lo) * c + ch)] = (bi * l + best) * c + ch;
      }
  if (should_record(tape, {x.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto yd = y.ptr();
    tape->record({parent_id(xd.get(), tid)}, yd, [xd, yd, argmax, tid]() {
      if (yd->g.empty() || !wants_grad(xd.get(), tid)) return;
      xd->ensure_grad();
      for (size_t i = 0; i < argmax->size(); ++i)
        xd->g[static_cast<size_t>((*argmax)[i])] += yd->g[i];
    });
  }
  return y;
}

Tensor global_avg_pool(Tape* tape, const Tensor& x) {
  require(x.shape().rank() == 3, Err::ShapeMismatch, "global_avg_pool input must be rank 3");
  const int64_t b = x.shape()[0], l = x.shape()[1], c = x.shape()[2];
  require(l > 0, Err::ShapeMismatch, "global_avg_pool over empty length");
  Tensor y(Shape(b, c));
  const double* xp = x.data().data();
  double* yp = y.data().data();
  const double inv_l = 1.0 / static_cast<double>(l);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t li = 0; li < l; ++li) s += xp[(bi * l + li) * c + ch];
      yp[bi * c + ch] = s * inv_l;
    }
  if (should_record(tape, {x.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto yd = y.ptr();
    tape->record({parent_id(xd.get(), tid)}, yd, [xd, yd, tid, b, l, c, inv_l]() {
      if (yd->g.empty() || !wants_grad(xd.get(), tid)) return;
      xd->ensure_grad();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t li = 0; li < l; ++li)
          for (int64_t ch = 0; ch < c; ++ch)
            xd->g[static_cast<size_t>((bi * l + li) * c + ch)] +=
                yd->g[static_cast<size_t>(bi * c + ch)] * inv_l;
    });
  }
  return y;
}

Tensor dense(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(x.shape().rank() == 2, Err::ShapeMismatch, "dense input must be rank 2");
  require(w.shape().rank() == 2, Err::ShapeMismatch, "dense weight must be rank 2");
  const int64_t b = x.shape()[0], f = x.shape()[1], g = w.shape()[1];
  require(w.shape()[0] == f, Err::ShapeMismatch,
          "dense weight rows " + std::to_string(w.shape()[0]) + " != input features " + std::to_string(f));
  require(bias.shape().rank() == 1 && bias.shape()[0] == g, Err::ShapeMismatch, "dense bias shape");
  Tensor y(Shape(b, g));
  double* yp = y.data().data();
  const double* bp = bias.data().data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < g; ++j) yp[bi * g + j] = bp[j];
  gemm(x.data().data(), w.data().data(), yp, b, f, g, true);

  if (should_record(tape, {x.raw(), w.raw(), bias.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto wd = w.ptr(); auto bd = bias.ptr(); auto yd = y.ptr();
    tape->record({parent_id(xd.get(), tid), parent_id(wd.get(), tid), parent_id(bd.get(), tid)},
                 yd, [xd, wd, bd, yd, tid, b, f, g]() {
                   if (yd->g.empty()) return;
                   const double* gy = yd->g.data();
                   if (wants_grad(bd.get(), tid)) {
                     bd->ensure_grad();
                     for (int64_t bi = 0; bi < b; ++bi)
                       for (int64_t j = 0; j < g; ++j) bd->g[static_cast<size_t>(j)] += gy[bi * g + j];
                   }
                   if (wants_grad(wd.get(), tid)) {
                     wd->ensure_grad();
                     std::vector<double> xt(static_cast<size_t>(f * b));
                     transpose(xd->v.data(), xt.data(), b, f);
                     gemm(xt.data(), gy, wd->g.data(), f, b, g, true);
                   }
                   if (wants_grad(xd.get(), tid)) {
                     xd->ensure_grad();
                     std::vector<double> wt(static_cast<size_t>(g * f));
                     transpose(wd->v.data(), wt.data(), f, g);
                     gemm(gy, wt.data(), xd->g.data(), b, g, f, true);
                   }
                 });
  }
  return y;
}

Tensor concat_channels(Tape* tape, std::span<const Tensor> xs) {
  require(!xs.empty(), Err::ShapeMismatch, "concat_channels of zero tensors");
  const int64_t b = xs[0].shape()[0], l = xs[0].shape()[1];
  int64_t ctotal = 0;
  for (const auto& t : xs) {
    require(t.shape().rank() == 3 && t.shape()[0] == b && t.shape()[1] == l, Err::ShapeMismatch,
            "concat_channels operands must share (batch, length)");
    ctotal += t.shape()[2];
  }
  Tensor y(Shape(b, l, ctotal));
  double* yp = y.data().data();
  parallel_for(b * l, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      double* dst = yp + r * ctotal;
      for (const auto& t : xs) {
        const int64_t c = t.shape()[2];
        const double* src = t.data().data() + r * c;
        std::copy(src, src + c, dst);
        dst += c;
      }
    }
  });

  bool any = false;
  if (tape)
    for (const auto& t : xs) any = any || wants_grad(t.raw(), tape->id());
  if (any) {
    const uint64_t tid = tape->id();
    std::vector<std::shared_ptr<TensorData>> parts;
    std::vector<int> parents;
    for (const auto& t : xs) {
      parts.push_back(t.ptr());
      parents.push_back(parent_id(t.raw(), tid));
    }
    auto yd = y.ptr();
    tape->record(std::move(parents), yd, [parts, yd, tid, b, l, ctotal]() {
      if (yd->g.empty()) return;
      int64_t off = 0;
      for (const auto& part : parts) {
        const int64_t c = part->shape[2];
        if (wants_grad(part.get(), tid)) {
          part->ensure_grad();
          parallel_for(b * l, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
              const double* src = yd->g.data() + r * ctotal + off;
              double* dst = part->g.data() + r * c;
              for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
          });
        }
        off += c;
      }
    });
  }
  return y;
}

Tensor mse_loss(Tape* tape, const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), Err::ShapeMismatch,
          "mse_loss shapes differ: " + pred.shape().str() + " vs " + target.shape().str());
  require(pred.numel() > 0, Err::ShapeMismatch, "mse_loss on empty tensors");
  const int64_t n = pred.numel();
  double acc = 0.0;
  const auto pp = pred.data();
  const auto tp = target.data();
  for (int64_t i = 0; i < n; ++i) {
    const double d = pp[static_cast<size_t>(i)] - tp[static_cast<size_t>(i)];
    acc += d * d;
  }
  Tensor y = Tensor::from(Shape(1), {acc / static_cast<double>(n)});
  if (should_record(tape, {pred.raw(), target.raw()})) {
    const uint64_t tid = tape->id();
    auto pd = pred.ptr(); auto td = target.ptr(); auto yd = y.ptr();
    tape->record({parent_id(pd.get(), tid), parent_id(td.get(), tid)}, yd, [pd, td, yd, tid, n]() {
      if (yd->g.empty()) return;
      const double gy = yd->g[0];
      const double scale = 2.0 / static_cast<double>(n);
      if (wants_grad(pd.get(), tid)) {
        pd->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          pd->g[static_cast<size_t>(i)] += gy * scale * (pd->v[static_cast<size_t>(i)] - td->v[static_cast<size_t>(i)]);
      }
      if (wants_grad(td.get(), tid)) {
        td->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          td->g[static_cast<size_t>(i)] -= gy * scale * (pd->v[static_cast<size_t>(i)] - td->v[static_cast<size_t>(i)]);
      }
    });
  }
  return y;
}

Tensor reduce_sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::from(Shape(1), {acc});
  if (should_record(tape, {x.raw()})) {
    const uint64_t tid = tape->id();
    auto xd = x.ptr(); auto yd = y.ptr();
    tape->record({parent_id(xd.get(), tid)}, yd, [xd, yd, tid]() {
      if (yd->g.empty() || !wants_grad(xd.get(), tid)) return;
      xd->ensure_grad();
      for (auto& g : xd->g) g += yd->g[0];
    });
  }
  return y;
}

}  // namespace rrwave
