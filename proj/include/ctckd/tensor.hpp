#pragma once

// Dense f64 tensors with a tape for reverse-mode gradients. Tensors are
// value-semantic handles onto shared storage; values are immutable once an
// op has produced them, only grad buffers mutate. Ops record a backward
// closure on the active tape (if any input is tracked), and
// Tape::backward replays the closures in reverse.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ctckd/common.hpp"

namespace ctckd {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); i++) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    auto impl = std::make_shared<detail::TensorImpl>();
    int64_t n = shape_numel(shape);
    check_arg(n >= 0, "tensor: negative dimension in ", shape_str(shape));
    impl->shape = std::move(shape);
    impl->value.assign(static_cast<size_t>(n), 0.0);
    return Tensor(std::move(impl));
  }

  static Tensor full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from_values(Shape shape, std::vector<double> values) {
    check_arg(shape_numel(shape) == static_cast<int64_t>(values.size()),
              "tensor: ", values.size(), " values do not fill ", shape_str(shape));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    return Tensor(std::move(impl));
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor t = zeros(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.impl_->value) v = dist(rng);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return impl_->numel(); }

  const double* data() const { return impl_->value.data(); }
  double* mutable_data() { return impl_->value.data(); }
  const std::vector<double>& values() const { return impl_->value; }

  double item() const {
    check_arg(numel() == 1, "item(): tensor has ", numel(), " elements");
    return impl_->value[0];
  }

  double at(int64_t i) const { return impl_->value[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const {
    return impl_->value[static_cast<size_t>(r * impl_->shape[1] + c)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const {
    check_state(has_grad(), "grad(): no gradient recorded");
    return impl_->grad;
  }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
};

// ---------------------------------------------------------------------------
// Tape

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* active = nullptr;
    return active;
  }

  void record(std::shared_ptr<detail::TensorImpl> out, std::function<void()> backward_fn) {
    ops_.emplace_back(std::move(out), std::move(backward_fn));
  }

  size_t size() const { return ops_.size(); }

  // Seeds d(root)/d(root)=1 and replays recorded ops in reverse. Grads of op
  // outputs are reset first so each call propagates exactly one unit of root
  // seed; leaf grads (never an op output) accumulate across calls.
  void backward(const Tensor& root) {
    check_arg(root.numel() == 1, "backward: root must be scalar, got ",
              shape_str(root.shape()));
    for (auto& [out, fn] : ops_) out->grad.clear();
    auto impl = root.impl();
    impl->ensure_grad();
    impl->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->second();
  }

 private:
  std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::function<void()>>> ops_;
};

// Activates a tape for the current thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(Tape::current()) { Tape::current() = &tape; }
  ~TapeScope() { Tape::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap cmap(const TensorImpl& t) {
  return ECMap(t.value.data(), t.shape[0], t.shape[1]);
}
inline EMap vmap(TensorImpl& t) { return EMap(t.value.data(), t.shape[0], t.shape[1]); }
inline EMap gmap(TensorImpl& t) { return EMap(t.grad.data(), t.shape[0], t.shape[1]); }

inline bool tracked(const Tensor& t) { return t.requires_grad(); }

inline Tensor make_result(Shape shape) { return Tensor::zeros(std::move(shape)); }

// Marks the output tracked and records the closure iff a tape is active and
// some input is tracked. The closure must itself skip inputs that are not
// tracked and bail out when the output never received a gradient.
template <class Fn>
void maybe_record(Tensor& out, bool any_input_tracked, Fn&& backward_fn) {
  Tape* tape = Tape::current();
  if (tape != nullptr && any_input_tracked) {
    out.set_requires_grad(true);
    tape->record(out.impl(), std::forward<Fn>(backward_fn));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_arg(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  Tensor out = detail::make_result(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; i++) out.mutable_data()[i] = a.data()[i] + b.data()[i];
  auto ia = a.impl(), ib = b.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a) || detail::tracked(b), [=] {
    if (io->grad.empty()) return;
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ia->grad[i] += io->grad[i];
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ib->grad[i] += io->grad[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_arg(a.shape() == b.shape(), "sub: shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  Tensor out = detail::make_result(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; i++) out.mutable_data()[i] = a.data()[i] - b.data()[i];
  auto ia = a.impl(), ib = b.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a) || detail::tracked(b), [=] {
    if (io->grad.empty()) return;
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ia->grad[i] += io->grad[i];
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ib->grad[i] -= io->grad[i];
    }
  });
  return out;
}

// Hadamard product; also serves as dropout application with an untracked
// externally supplied mask.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_arg(a.shape() == b.shape(), "mul: shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  Tensor out = detail::make_result(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; i++) out.mutable_data()[i] = a.data()[i] * b.data()[i];
  auto ia = a.impl(), ib = b.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a) || detail::tracked(b), [=] {
    if (io->grad.empty()) return;
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ia->grad[i] += io->grad[i] * ib->value[i];
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ib->grad[i] += io->grad[i] * ia->value[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::make_result(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; i++) out.mutable_data()[i] = a.data()[i] * c;
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < io->grad.size(); i++) ia->grad[i] += io->grad[i] * c;
  });
  return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                     bool trans_b = false) {
  check_arg(a.ndim() == 2 && b.ndim() == 2, "matmul: need 2-D operands, got ",
            shape_str(a.shape()), " and ", shape_str(b.shape()));
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  check_arg(ka == kb, "matmul: inner dimensions disagree, ", shape_str(a.shape()),
            (trans_a ? "^T" : ""), " * ", shape_str(b.shape()), (trans_b ? "^T" : ""));
  Tensor out = detail::make_result({m, n});
  {
    detail::ECMap ma = detail::cmap(*a.impl());
    detail::ECMap mb = detail::cmap(*b.impl());
    detail::EMap mo = detail::vmap(*out.impl());
    if (!trans_a && !trans_b)
      mo.noalias() = ma * mb;
    else if (trans_a && !trans_b)
      mo.noalias() = ma.transpose() * mb;
    else if (!trans_a && trans_b)
      mo.noalias() = ma * mb.transpose();
    else
      mo.noalias() = ma.transpose() * mb.transpose();
  }
  auto ia = a.impl(), ib = b.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a) || detail::tracked(b), [=] {
    if (io->grad.empty()) return;
    detail::ECMap go(io->grad.data(), io->shape[0], io->shape[1]);
    detail::ECMap ma = detail::cmap(*ia);
    detail::ECMap mb = detail::cmap(*ib);
    if (ia->requires_grad) {
      ia->ensure_grad();
      detail::EMap ga = detail::gmap(*ia);
      if (!trans_a && !trans_b)
        ga.noalias() += go * mb.transpose();
      else if (trans_a && !trans_b)
        ga.noalias() += mb * go.transpose();
      else if (!trans_a && trans_b)
        ga.noalias() += go * mb;
      else
        ga.noalias() += mb.transpose() * go.transpose();
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      detail::EMap gb = detail::gmap(*ib);
      if (!trans_a && !trans_b)
        gb.noalias() += ma.transpose() * go;
      else if (trans_a && !trans_b)
        gb.noalias() += ma * go;
      else if (!trans_a && trans_b)
        gb.noalias() += go.transpose() * ma;
      else
        gb.noalias() += go.transpose() * ma.transpose();
    }
  });
  return out;
}

// Broadcasts a length-C row vector over every row of a T x C matrix.
inline Tensor add_row(const Tensor& a, const Tensor& v) {
  check_arg(a.ndim() == 2 && v.ndim() == 1 && a.dim(1) == v.dim(0),
            "add_row: incompatible shapes ", shape_str(a.shape()), " and ",
            shape_str(v.shape()));
  Tensor out = detail::make_result(a.shape());
  const int64_t rows = a.dim(0), cols = a.dim(1);
  for (int64_t r = 0; r < rows; r++)
    for (int64_t c = 0; c < cols; c++)
      out.mutable_data()[r * cols + c] = a.at(r, c) + v.at(c);
  auto ia = a.impl(), iv = v.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a) || detail::tracked(v), [=] {
    if (io->grad.empty()) return;
    const int64_t rows = io->shape[0], cols = io->shape[1];
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (size_t i = 0; i < io->grad.size(); i++) ia->grad[i] += io->grad[i];
    }
    if (iv->requires_grad) {
      iv->ensure_grad();
      for (int64_t r = 0; r < rows; r++)
        for (int64_t c = 0; c < cols; c++) iv->grad[c] += io->grad[r * cols + c];
    }
  });
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_result({1});
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); i++) s += a.data()[i];
  out.mutable_data()[0] = s;
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    const double g = io->grad[0];
    for (double& v : ia->grad) v += g;
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  check_arg(a.ndim() == 2, "transpose: need 2-D, got ", shape_str(a.shape()));
  const int64_t r = a.dim(0), c = a.dim(1);
  Tensor out = detail::make_result({c, r});
  for (int64_t i = 0; i < r; i++)
    for (int64_t j = 0; j < c; j++) out.mutable_data()[j * r + i] = a.at(i, j);
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    const int64_t r = ia->shape[0], c = ia->shape[1];
    for (int64_t i = 0; i < r; i++)
      for (int64_t j = 0; j < c; j++) ia->grad[i * c + j] += io->grad[j * r + i];
  });
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check_arg(!parts.empty(), "concat: empty input list");
  check_arg(axis == 0 || axis == 1, "concat: axis must be 0 or 1, got ", axis);
  for (const Tensor& p : parts)
    check_arg(p.ndim() == 2, "concat: need 2-D parts, got ", shape_str(p.shape()));
  const int other = 1 - axis;
  int64_t total = 0;
  for (const Tensor& p : parts) {
    check_arg(p.dim(other) == parts[0].dim(other), "concat: mismatched shape ",
              shape_str(p.shape()), " vs ", shape_str(parts[0].shape()));
    total += p.dim(axis);
  }
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = total;
  Tensor out = detail::make_result(out_shape);
  const int64_t out_cols = out.dim(1);
  bool any_tracked = false;
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    any_tracked = any_tracked || detail::tracked(p);
    const int64_t pr = p.dim(0), pc = p.dim(1);
    for (int64_t i = 0; i < pr; i++)
      for (int64_t j = 0; j < pc; j++) {
        int64_t oi = axis == 0 ? offset + i : i;
        int64_t oj = axis == 1 ? offset + j : j;
        out.mutable_data()[oi * out_cols + oj] = p.at(i, j);
      }
    offset += p.dim(axis);
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  auto io = out.impl();
  detail::maybe_record(out, any_tracked, [=] {
    if (io->grad.empty()) return;
    const int64_t out_cols = io->shape[1];
    int64_t offset = 0;
    for (const auto& ip : impls) {
      const int64_t pr = ip->shape[0], pc = ip->shape[1];
      if (ip->requires_grad) {
        ip->ensure_grad();
        for (int64_t i = 0; i < pr; i++)
          for (int64_t j = 0; j < pc; j++) {
            int64_t oi = axis == 0 ? offset + i : i;
            int64_t oj = axis == 1 ? offset + j : j;
            ip->grad[i * pc + j] += io->grad[oi * out_cols + oj];
          }
      }
      offset += axis == 0 ? pr : pc;
    }
  });
  return out;
}

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  check_arg(a.ndim() == 2, "slice: need 2-D, got ", shape_str(a.shape()));
  check_arg(axis == 0 || axis == 1, "slice: axis must be 0 or 1, got ", axis);
  check_arg(start >= 0 && len >= 0 && start + len <= a.dim(axis),
            "slice: range [", start, ",", start + len, ") out of bounds for ",
            shape_str(a.shape()), " on axis ", axis);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out = detail::make_result(out_shape);
  const int64_t cols = a.dim(1), out_cols = out.dim(1);
  for (int64_t i = 0; i < out.dim(0); i++)
    for (int64_t j = 0; j < out_cols; j++) {
      int64_t si = axis == 0 ? start + i : i;
      int64_t sj = axis == 1 ? start + j : j;
      out.mutable_data()[i * out_cols + j] = a.data()[si * cols + sj];
    }
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    const int64_t cols = ia->shape[1], out_cols = io->shape[1];
    for (int64_t i = 0; i < io->shape[0]; i++)
      for (int64_t j = 0; j < out_cols; j++) {
        int64_t si = axis == 0 ? start + i : i;
        int64_t sj = axis == 1 ? start + j : j;
        ia->grad[si * cols + sj] += io->grad[i * out_cols + j];
      }
  });
  return out;
}

// Gathers arbitrary flat positions into a 1-D tensor.
inline Tensor take(const Tensor& a, const std::vector<int64_t>& indices) {
  for (int64_t ix : indices)
    check_arg(ix >= 0 && ix < a.numel(), "take: index ", ix, " out of range for ",
              shape_str(a.shape()));
  Tensor out = detail::make_result({static_cast<int64_t>(indices.size())});
  for (size_t i = 0; i < indices.size(); i++)
    out.mutable_data()[i] = a.data()[indices[i]];
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=, idx = indices] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < idx.size(); i++) ia->grad[idx[i]] += io->grad[i];
  });
  return out;
}

// Same storage, new shape; gradient passes through untouched.
inline Tensor reshape(const Tensor& a, Shape shape) {
  check_arg(shape_numel(shape) == a.numel(), "reshape: ", shape_str(a.shape()),
            " cannot become ", shape_str(shape));
  Tensor out = Tensor::from_values(std::move(shape), a.values());
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < io->grad.size(); i++) ia->grad[i] += io->grad[i];
  });
  return out;
}

// Row lookup: table is V x D, ids select rows.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  check_arg(table.ndim() == 2, "embedding: table must be 2-D, got ",
            shape_str(table.shape()));
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    check_arg(id >= 0 && id < v, "embedding: id ", id, " out of range [0,", v, ")");
  Tensor out = detail::make_result({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); i++)
    std::copy_n(table.data() + ids[i] * d, d, out.mutable_data() + i * d);
  auto it = table.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(table), [=, ids = ids] {
    if (io->grad.empty() || !it->requires_grad) return;
    it->ensure_grad();
    const int64_t d = it->shape[1];
    for (size_t i = 0; i < ids.size(); i++)
      for (int64_t j = 0; j < d; j++) it->grad[ids[i] * d + j] += io->grad[i * d + j];
  });
  return out;
}

namespace detail {

inline void softmax_row(const double* x, double* y, int64_t n) {
  double mx = x[0];
  for (int64_t i = 1; i < n; i++) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (int64_t i = 0; i < n; i++) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (int64_t i = 0; i < n; i++) y[i] /= z;
}

inline void log_softmax_row(const double* x, double* y, int64_t n) {
  double mx = x[0];
  for (int64_t i = 1; i < n; i++) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (int64_t i = 0; i < n; i++) z += std::exp(x[i] - mx);
  const double lz = mx + std::log(z);
  for (int64_t i = 0; i < n; i++) y[i] = x[i] - lz;
}

}  // namespace detail

// Row-wise softmax (axis=1) on 2-D input; axis=0 normalises columns.
inline Tensor softmax(const Tensor& a, int axis = 1) {
  check_arg(a.ndim() == 2, "softmax: need 2-D, got ", shape_str(a.shape()));
  check_arg(axis == 0 || axis == 1, "softmax: axis must be 0 or 1, got ", axis);
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  const int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor out = detail::make_result(a.shape());
  for (int64_t r = 0; r < rows; r++)
    detail::softmax_row(a.data() + r * cols, out.mutable_data() + r * cols, cols);
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    const int64_t rows = io->shape[0], cols = io->shape[1];
    for (int64_t r = 0; r < rows; r++) {
      const double* y = io->value.data() + r * cols;
      const double* gy = io->grad.data() + r * cols;
      double dot = 0.0;
      for (int64_t c = 0; c < cols; c++) dot += gy[c] * y[c];
      double* gx = ia->grad.data() + r * cols;
      for (int64_t c = 0; c < cols; c++) gx[c] += y[c] * (gy[c] - dot);
    }
  });
  return out;
}

// log softmax(x) = x - logsumexp(x), computed with max subtraction.
inline Tensor log_softmax(const Tensor& a, int axis = 1) {
  check_arg(a.ndim() == 2, "log_softmax: need 2-D, got ", shape_str(a.shape()));
  check_arg(axis == 0 || axis == 1, "log_softmax: axis must be 0 or 1, got ", axis);
  if (axis == 0) return transpose(log_softmax(transpose(a), 1));
  const int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor out = detail::make_result(a.shape());
  for (int64_t r = 0; r < rows; r++)
    detail::log_softmax_row(a.data() + r * cols, out.mutable_data() + r * cols, cols);
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    const int64_t rows = io->shape[0], cols = io->shape[1];
    for (int64_t r = 0; r < rows; r++) {
      const double* y = io->value.data() + r * cols;
      const double* gy = io->grad.data() + r * cols;
      double gsum = 0.0;
      for (int64_t c = 0; c < cols; c++) gsum += gy[c];
      double* gx = ia->grad.data() + r * cols;
      for (int64_t c = 0; c < cols; c++) gx[c] += gy[c] - std::exp(y[c]) * gsum;
    }
  });
  return out;
}

// Row-wise layer norm with affine gain/bias (length = row width).
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-9) {
  check_arg(a.ndim() == 2, "layer_norm: need 2-D input, got ", shape_str(a.shape()));
  const int64_t rows = a.dim(0), cols = a.dim(1);
  check_arg(gain.ndim() == 1 && gain.dim(0) == cols && bias.ndim() == 1 &&
                bias.dim(0) == cols,
            "layer_norm: gain/bias must be length ", cols, ", got ",
            shape_str(gain.shape()), " and ", shape_str(bias.shape()));
  Tensor out = detail::make_result(a.shape());
  // cache per-row 1/std and normalised values for backward
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  auto xhat = std::make_shared<std::vector<double>>(rows * cols);
  for (int64_t r = 0; r < rows; r++) {
    const double* x = a.data() + r * cols;
    double mean = 0.0;
    for (int64_t c = 0; c < cols; c++) mean += x[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; c++) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int64_t c = 0; c < cols; c++) {
      const double xh = (x[c] - mean) * is;
      (*xhat)[r * cols + c] = xh;
      out.mutable_data()[r * cols + c] = xh * gain.at(c) + bias.at(c);
    }
  }
  auto ia = a.impl(), ig = gain.impl(), ib = bias.impl(), io = out.impl();
  detail::maybe_record(
      out, detail::tracked(a) || detail::tracked(gain) || detail::tracked(bias), [=] {
        if (io->grad.empty()) return;
        const int64_t rows = io->shape[0], cols = io->shape[1];
        for (int64_t r = 0; r < rows; r++) {
          const double* gy = io->grad.data() + r * cols;
          const double* xh = xhat->data() + r * cols;
          if (ig->requires_grad) {
            ig->ensure_grad();
            for (int64_t c = 0; c < cols; c++) ig->grad[c] += gy[c] * xh[c];
          }
          if (ib->requires_grad) {
            ib->ensure_grad();
            for (int64_t c = 0; c < cols; c++) ib->grad[c] += gy[c];
          }
          if (ia->requires_grad) {
            ia->ensure_grad();
            double gh_sum = 0.0, gh_xh = 0.0;
            for (int64_t c = 0; c < cols; c++) {
              const double gh = gy[c] * ig->value[c];
              gh_sum += gh;
              gh_xh += gh * xh[c];
            }
            const double inv_n = 1.0 / static_cast<double>(cols);
            double* gx = ia->grad.data() + r * cols;
            for (int64_t c = 0; c < cols; c++) {
              const double gh = gy[c] * ig->value[c];
              gx[c] += (*inv_std)[r] * (gh - inv_n * gh_sum - xh[c] * inv_n * gh_xh);
            }
          }
        }
      });
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = detail::make_result(a.shape());
  for (int64_t i = 0; i < a.numel(); i++)
    out.mutable_data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < io->grad.size(); i++) {
      const double s = io->value[i];
      ia->grad[i] += io->grad[i] * s * (1.0 - s);
    }
  });
  return out;
}

inline Tensor swish(const Tensor& a) {
  Tensor out = detail::make_result(a.shape());
  for (int64_t i = 0; i < a.numel(); i++) {
    const double x = a.data()[i];
    out.mutable_data()[i] = x / (1.0 + std::exp(-x));
  }
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < io->grad.size(); i++) {
      const double x = ia->value[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      ia->grad[i] += io->grad[i] * s * (1.0 + x * (1.0 - s));
    }
  });
  return out;
}

// Gated linear unit over the channel axis: [T x 2C] -> [T x C],
// out = first_half * sigmoid(second_half).
inline Tensor glu(const Tensor& a) {
  check_arg(a.ndim() == 2 && a.dim(1) % 2 == 0, "glu: need 2-D with even columns, got ",
            shape_str(a.shape()));
  const int64_t rows = a.dim(0), half = a.dim(1) / 2;
  Tensor out = detail::make_result({rows, half});
  for (int64_t r = 0; r < rows; r++)
    for (int64_t c = 0; c < half; c++) {
      const double v = a.at(r, c);
      const double g = a.at(r, half + c);
      out.mutable_data()[r * half + c] = v / (1.0 + std::exp(-g));
    }
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    const int64_t rows = io->shape[0], half = io->shape[1];
    const int64_t cols = 2 * half;
    for (int64_t r = 0; r < rows; r++)
      for (int64_t c = 0; c < half; c++) {
        const double v = ia->value[r * cols + c];
        const double g = ia->value[r * cols + half + c];
        const double s = 1.0 / (1.0 + std::exp(-g));
        const double gy = io->grad[r * half + c];
        ia->grad[r * cols + c] += gy * s;
        ia->grad[r * cols + half + c] += gy * v * s * (1.0 - s);
      }
  });
  return out;
}

// Depthwise 1-D convolution along time with odd kernel and same padding.
// x is T x C, kernel is K x C (one filter column per channel).
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
  check_arg(x.ndim() == 2 && kernel.ndim() == 2, "depthwise_conv1d: need 2-D, got ",
            shape_str(x.shape()), " and ", shape_str(kernel.shape()));
  check_arg(kernel.dim(1) == x.dim(1), "depthwise_conv1d: channel mismatch ",
            shape_str(x.shape()), " vs ", shape_str(kernel.shape()));
  check_arg(kernel.dim(0) % 2 == 1, "depthwise_conv1d: kernel size must be odd, got ",
            kernel.dim(0));
  const int64_t t_len = x.dim(0), chans = x.dim(1), k = kernel.dim(0);
  const int64_t pad = k / 2;
  Tensor out = detail::make_result(x.shape());
  for (int64_t t = 0; t < t_len; t++)
    for (int64_t j = 0; j < k; j++) {
      const int64_t src = t + j - pad;
      if (src < 0 || src >= t_len) continue;
      const double* xr = x.data() + src * chans;
      const double* kr = kernel.data() + j * chans;
      double* orow = out.mutable_data() + t * chans;
      for (int64_t c = 0; c < chans; c++) orow[c] += xr[c] * kr[c];
    }
  auto ix = x.impl(), ik = kernel.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(x) || detail::tracked(kernel), [=] {
    if (io->grad.empty()) return;
    const int64_t t_len = ix->shape[0], chans = ix->shape[1], k = ik->shape[0];
    const int64_t pad = k / 2;
    if (ix->requires_grad) ix->ensure_grad();
    if (ik->requires_grad) ik->ensure_grad();
    for (int64_t t = 0; t < t_len; t++)
      for (int64_t j = 0; j < k; j++) {
        const int64_t src = t + j - pad;
        if (src < 0 || src >= t_len) continue;
        const double* go = io->grad.data() + t * chans;
        if (ix->requires_grad) {
          const double* kr = ik->value.data() + j * chans;
          double* gx = ix->grad.data() + src * chans;
          for (int64_t c = 0; c < chans; c++) gx[c] += go[c] * kr[c];
        }
        if (ik->requires_grad) {
          const double* xr = ix->value.data() + src * chans;
          double* gk = ik->grad.data() + j * chans;
          for (int64_t c = 0; c < chans; c++) gk[c] += go[c] * xr[c];
        }
      }
  });
  return out;
}

inline Tensor exp(const Tensor& a) {
  Tensor out = detail::make_result(a.shape());
  for (int64_t i = 0; i < a.numel(); i++) out.mutable_data()[i] = std::exp(a.data()[i]);
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < io->grad.size(); i++)
      ia->grad[i] += io->grad[i] * io->value[i];
  });
  return out;
}

inline Tensor log(const Tensor& a) {
  Tensor out = detail::make_result(a.shape());
  for (int64_t i = 0; i < a.numel(); i++) out.mutable_data()[i] = std::log(a.data()[i]);
  auto ia = a.impl(), io = out.impl();
  detail::maybe_record(out, detail::tracked(a), [=] {
    if (io->grad.empty() || !ia->requires_grad) return;
    ia->ensure_grad();
    for (size_t i = 0; i < io->grad.size(); i++)
      ia->grad[i] += io->grad[i] / ia->value[i];
  });
  return out;
}

// Additive causal mask: 0 on/below the diagonal, large negative above.
inline Tensor causal_mask(int64_t n) {
  Tensor m = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; i++)
    for (int64_t j = i + 1; j < n; j++) m.mutable_data()[i * n + j] = -1e30;
  return m;
}

// Scaled dot-product attention for a single head. q: Tq x Dk, k/v: Tk x Dk.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor* mask = nullptr) {
  check_arg(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2 && q.dim(1) == k.dim(1) &&
                k.dim(0) == v.dim(0),
            "scaled_dot_attention: incompatible shapes q=", shape_str(q.shape()),
            " k=", shape_str(k.shape()), " v=", shape_str(v.shape()));
  Tensor scores = scale(matmul(q, k, false, true), 1.0 / std::sqrt(double(q.dim(1))));
  if (mask != nullptr) {
    check_arg(mask->shape() == scores.shape(), "scaled_dot_attention: mask shape ",
              shape_str(mask->shape()), " does not match scores ",
              shape_str(scores.shape()));
    scores = add(scores, *mask);
  }
  return matmul(softmax(scores), v);
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / double(a.numel())); }

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

inline bool all_finite(const Tensor& a) {
  for (int64_t i = 0; i < a.numel(); i++)
    if (!std::isfinite(a.data()[i])) return false;
  return true;
}

}  // namespace ctckd
