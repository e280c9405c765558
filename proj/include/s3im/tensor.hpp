#pragma once

// Dense float64 arrays with tape-based reverse-mode differentiation.
//
// A Tensor is an immutable value (shape + shared row-major storage) that may carry a
// handle into a Tape. Operations on tensors that live on a tape append a record to it;
// operations on plain constants just compute. Broadcasting is scalar-only: a binary
// op accepts equal shapes, or one operand with exactly one element.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "s3im/errors.hpp"

namespace s3im {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

class Tape;

class Tensor {
public:
    static constexpr std::size_t kNoNode = static_cast<std::size_t>(-1);

    Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)),
          values_(std::make_shared<const std::vector<double>>(std::move(values))) {
        if (numel(shape_) != values_->size()) {
            throw ShapeError("Tensor: shape " + to_string(shape_) + " holds " +
                             std::to_string(numel(shape_)) + " values, got " +
                             std::to_string(values_->size()));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor full(Shape shape, double v) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }
    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static Tensor vector(std::vector<double> values) {
        const auto n = values.size();
        return Tensor(Shape{n}, std::move(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_->size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    std::span<const double> values() const { return *values_; }
    const std::shared_ptr<const std::vector<double>>& storage() const { return values_; }
    double operator[](std::size_t i) const { return (*values_)[i]; }

    double item() const {
        if (size() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
        return (*values_)[0];
    }

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::size_t node() const { return node_; }

    /// Same values and shape, detached from any tape.
    Tensor detached() const {
        Tensor t = *this;
        t.tape_ = nullptr;
        t.node_ = kNoNode;
        return t;
    }

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> values_;
    Tape* tape_ = nullptr;
    std::size_t node_ = kNoNode;
};

/// Receives the upstream gradient of one record and accumulates into its inputs.
using BackwardFn = std::function<void(std::span<const double> upstream, class GradSink& sink)>;

class GradSink {
public:
    /// Gradient buffer of `input`, zero-initialized on first use. Null for constants.
    double* slot(const Tensor& input);

private:
    friend class Tape;
    explicit GradSink(Tape& tape) : tape_(tape) {}
    Tape& tape_;
};

/// Gradient map returned by Tape::backward. Indexed by the tensors that were recorded.
class Gradients {
public:
    /// d(root)/d(t), same length as t. Zeros for nodes the root does not depend on.
    std::span<const double> operator[](const Tensor& t) const {
        if (t.tape() != tape_ || t.node() == Tensor::kNoNode) {
            throw TapeError("Gradients: tensor is not recorded on this tape");
        }
        return grads_.at(t.node());
    }

    Tensor tensor(const Tensor& t) const {
        const auto g = (*this)[t];
        return Tensor(t.shape(), std::vector<double>(g.begin(), g.end()));
    }

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> grads_;
};

/// Ordered record of operations. Inputs always precede the records that consume them.
/// Single-threaded; tensors hold a raw pointer, so the tape must outlive them.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Register a differentiable leaf (a parameter or input we want gradients for).
    Tensor variable(const Tensor& value) {
        return record("leaf", value.shape(), value.storage(), {}, nullptr);
    }
    Tensor variable(Shape shape, std::vector<double> values) {
        return variable(Tensor(std::move(shape), std::move(values)));
    }

    std::size_t size() const { return records_.size(); }
    const std::string& op_name(std::size_t node) const { return records_.at(node).name; }
    const std::vector<std::size_t>& op_inputs(std::size_t node) const { return records_.at(node).inputs; }
    bool consumed() const { return consumed_; }

    void reset() {
        records_.clear();
        consumed_ = false;
    }

    /// Append a record computed from `inputs`. If none of the inputs is on a tape the
    /// result is a plain constant and nothing is recorded.
    static Tensor make(const char* name, Shape shape, std::vector<double> values,
                       std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
        return make(name, std::move(shape), std::make_shared<const std::vector<double>>(std::move(values)), inputs,
                    std::move(backward));
    }

    static Tensor make(const char* name, Shape shape, std::shared_ptr<const std::vector<double>> storage,
                       std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
        Tape* tape = nullptr;
        for (const Tensor* in : inputs) {
            if (!in->on_tape()) continue;
            if (tape && tape != in->tape()) throw TapeError(std::string(name) + ": inputs live on different tapes");
            tape = in->tape();
        }
        if (numel(shape) != storage->size()) throw ShapeError(std::string(name) + ": internal shape mismatch");
        if (!tape) {
            Tensor t;
            t.shape_ = std::move(shape);
            t.values_ = std::move(storage);
            return t;
        }
        std::vector<std::size_t> ids;
        for (const Tensor* in : inputs) {
            if (in->on_tape()) ids.push_back(in->node());
        }
        return tape->record(name, std::move(shape), std::move(storage), std::move(ids), std::move(backward));
    }

    Gradients backward(const Tensor& root) {
        if (root.tape() != this) throw TapeError("backward: root is not recorded on this tape");
        if (root.size() != 1) {
            throw TapeError("backward: root must be scalar, got shape " + to_string(root.shape()));
        }
        if (consumed_) throw TapeError("backward: stale tape (already differentiated; re-run the forward pass)");
        consumed_ = true;

        grads_.assign(records_.size(), {});
        grads_[root.node()] = {1.0};
        GradSink sink(*this);
        for (std::size_t i = root.node() + 1; i-- > 0;) {
            if (grads_[i].empty() || !records_[i].backward) continue;
            records_[i].backward(grads_[i], sink);
        }
        Gradients out;
        out.tape_ = this;
        out.grads_ = std::move(grads_);
        for (std::size_t i = 0; i < records_.size(); ++i) {
            if (out.grads_[i].empty()) out.grads_[i].assign(records_[i].numel, 0.0);
        }
        grads_.clear();
        return out;
    }

private:
    friend class GradSink;

    struct Record {
        std::string name;
        std::vector<std::size_t> inputs;
        std::size_t numel = 0;
        BackwardFn backward;
    };

    Tensor record(const char* name, Shape shape, std::shared_ptr<const std::vector<double>> storage,
                  std::vector<std::size_t> inputs, BackwardFn backward) {
        if (consumed_) throw TapeError(std::string(name) + ": tape already differentiated; call reset()");
        Tensor t;
        t.shape_ = std::move(shape);
        t.values_ = std::move(storage);
        t.tape_ = this;
        t.node_ = records_.size();
        records_.push_back(Record{name, std::move(inputs), t.size(), std::move(backward)});
        return t;
    }

    std::vector<Record> records_;
    std::vector<std::vector<double>> grads_;
    bool consumed_ = false;
};

inline double* GradSink::slot(const Tensor& input) {
    if (!input.on_tape()) return nullptr;
    auto& g = tape_.grads_[input.node()];
    if (g.empty()) g.assign(input.size(), 0.0);
    return g.data();
}

// ---------------------------------------------------------------------------
// Elementwise operations

enum class UnaryOp { Neg, Exp, Log, Sqrt, Square, Relu, Sigmoid, Sin, Cos, Abs, Softplus };
enum class BinaryOp { Add, Sub, Mul, Div };

namespace detail {

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& a, F f, D df) {
    const auto in = a.storage();
    auto out = std::make_shared<std::vector<double>>(in->size());
    for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = f((*in)[i]);
    std::shared_ptr<const std::vector<double>> result_values = out;
    return Tape::make(name, a.shape(), result_values, {&a},
                      [a, in, result_values, df](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.slot(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df((*in)[i], (*result_values)[i]);
                      });
}

} // namespace detail

inline Tensor elementwise(UnaryOp op, const Tensor& a) {
    using detail::unary;
    switch (op) {
    case UnaryOp::Neg:
        return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
    case UnaryOp::Exp:
        return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case UnaryOp::Log:
        for (double v : a.values()) {
            if (v < 0) throw DomainError("ln: negative input " + std::to_string(v));
        }
        return unary("ln", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    case UnaryOp::Sqrt:
        for (double v : a.values()) {
            if (v < 0) throw DomainError("sqrt: negative input " + std::to_string(v));
        }
        return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
    case UnaryOp::Square:
        return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
    case UnaryOp::Relu:
        return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                     [](double x, double) { return x > 0 ? 1.0 : 0.0; });
    case UnaryOp::Sigmoid:
        return unary("sigmoid", a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
    case UnaryOp::Sin:
        return unary("sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
    case UnaryOp::Cos:
        return unary("cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
    case UnaryOp::Abs:
        // subgradient 0 at the kink
        return unary("abs", a, [](double x) { return std::abs(x); },
                     [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
    case UnaryOp::Softplus:
        return unary("softplus", a, detail::stable_softplus,
                     [](double x, double) { return detail::stable_sigmoid(x); });
    }
    throw DomainError("elementwise: unknown unary op");
}

inline Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!same && !a_scalar && !b_scalar) {
        throw ShapeError("elementwise: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const Shape shape = same ? a.shape() : (a_scalar ? b.shape() : a.shape());
    const std::size_t n = numel(shape);
    const auto av = a.storage();
    const auto bv = b.storage();
    const std::size_t sa = av->size() == 1 ? 0 : 1;
    const std::size_t sb = bv->size() == 1 ? 0 : 1;

    std::vector<double> out(n);
    const char* name = "add";
    switch (op) {
    case BinaryOp::Add:
        for (std::size_t i = 0; i < n; ++i) out[i] = (*av)[i * sa] + (*bv)[i * sb];
        break;
    case BinaryOp::Sub:
        name = "sub";
        for (std::size_t i = 0; i < n; ++i) out[i] = (*av)[i * sa] - (*bv)[i * sb];
        break;
    case BinaryOp::Mul:
        name = "mul";
        for (std::size_t i = 0; i < n; ++i) out[i] = (*av)[i * sa] * (*bv)[i * sb];
        break;
    case BinaryOp::Div:
        name = "div";
        for (std::size_t i = 0; i < n; ++i) out[i] = (*av)[i * sa] / (*bv)[i * sb];
        break;
    }

    return Tape::make(name, shape, std::move(out), {&a, &b},
                      [a, b, av, bv, sa, sb, op](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.slot(a);
                          double* gb = sink.slot(b);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              const double x = (*av)[i * sa];
                              const double y = (*bv)[i * sb];
                              double dx = 0, dy = 0;
                              switch (op) {
                              case BinaryOp::Add: dx = 1; dy = 1; break;
                              case BinaryOp::Sub: dx = 1; dy = -1; break;
                              case BinaryOp::Mul: dx = y; dy = x; break;
                              case BinaryOp::Div: dx = 1 / y; dy = -x / (y * y); break;
                              }
                              if (ga) ga[i * sa] += g[i] * dx;
                              if (gb) gb[i * sb] += g[i] * dy;
                          }
                      });
}

/// Clamp into [lo, hi]. Gradient is 1 inside the closed interval and 0 outside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw DomainError("clamp: lo > hi");
    return detail::unary(
        "clamp", a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Tensor neg(const Tensor& a) { return elementwise(UnaryOp::Neg, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryOp::Exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(UnaryOp::Log, a); }
inline Tensor sqrt(const Tensor& a) { return elementwise(UnaryOp::Sqrt, a); }
inline Tensor square(const Tensor& a) { return elementwise(UnaryOp::Square, a); }
inline Tensor relu(const Tensor& a) { return elementwise(UnaryOp::Relu, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(UnaryOp::Sigmoid, a); }
inline Tensor sin(const Tensor& a) { return elementwise(UnaryOp::Sin, a); }
inline Tensor cos(const Tensor& a) { return elementwise(UnaryOp::Cos, a); }
inline Tensor abs(const Tensor& a) { return elementwise(UnaryOp::Abs, a); }
inline Tensor softplus(const Tensor& a) { return elementwise(UnaryOp::Softplus, a); }

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Div, a, b); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

// ---------------------------------------------------------------------------
// Shape manipulation, reductions, contractions

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    return Tape::make("reshape", std::move(shape), a.storage(), {&a},
                      [a](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.slot(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      });
}

enum class ReduceOp { Sum, Mean };

/// Sum or mean over `axes` (all axes when empty). Reduced axes are dropped.
inline Tensor reduce(ReduceOp op, const Tensor& a, std::vector<std::size_t> axes = {}) {
    const auto& in_shape = a.shape();
    const std::size_t rank = in_shape.size();
    std::vector<bool> reduced(rank, axes.empty());
    for (std::size_t ax : axes) {
        if (ax >= rank) throw IndexError("reduce: axis " + std::to_string(ax) + " invalid for shape " + to_string(in_shape));
        if (reduced[ax]) throw IndexError("reduce: axis " + std::to_string(ax) + " repeated");
        reduced[ax] = true;
    }
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        if (reduced[d]) count *= in_shape[d];
        else out_shape.push_back(in_shape[d]);
    }

    // output flat index for every input element
    auto target = std::make_shared<std::vector<std::size_t>>(a.size());
    std::vector<std::size_t> out_stride(rank, 0);
    {
        std::size_t s = 1;
        for (std::size_t d = rank; d-- > 0;) {
            if (!reduced[d]) {
                out_stride[d] = s;
                s *= in_shape[d];
            }
        }
    }
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::size_t o = 0;
        for (std::size_t d = 0; d < rank; ++d) o += idx[d] * out_stride[d];
        (*target)[i] = o;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < in_shape[d]) break;
            idx[d] = 0;
        }
    }

    const double scale = (op == ReduceOp::Mean && count > 0) ? 1.0 / static_cast<double>(count) : 1.0;
    std::vector<double> out(numel(out_shape), 0.0);
    const auto in = a.values();
    for (std::size_t i = 0; i < in.size(); ++i) out[(*target)[i]] += in[i];
    if (op == ReduceOp::Mean) {
        for (double& v : out) v *= scale;
    }
    return Tape::make(op == ReduceOp::Sum ? "sum" : "mean", std::move(out_shape), std::move(out), {&a},
                      [a, target, scale](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.slot(a);
                          for (std::size_t i = 0; i < target->size(); ++i) ga[i] += g[(*target)[i]] * scale;
                      });
}

inline Tensor sum(const Tensor& a, std::vector<std::size_t> axes = {}) { return reduce(ReduceOp::Sum, a, std::move(axes)); }
inline Tensor mean(const Tensor& a, std::vector<std::size_t> axes = {}) { return reduce(ReduceOp::Mean, a, std::move(axes)); }

/// [m x k] . [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
    }
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    const auto av = a.storage();
    const auto bv = b.storage();

    std::vector<double> out(static_cast<std::size_t>(m * n));
    MMap(out.data(), m, n).noalias() = CMap(av->data(), m, k) * CMap(bv->data(), k, n);

    return Tape::make("matmul", Shape{a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
                      [a, b, av, bv, m, k, n](std::span<const double> g, GradSink& sink) {
                          CMap G(g.data(), m, n);
                          if (double* ga = sink.slot(a)) MMap(ga, m, k).noalias() += G * CMap(bv->data(), k, n).transpose();
                          if (double* gb = sink.slot(b)) MMap(gb, k, n).noalias() += CMap(av->data(), m, k).transpose() * G;
                      });
}

/// Dense layer x [m, k] * w [k, n] + b, with bias [1, n] added to every row.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.size() != w.dim(1)) {
        throw ShapeError("linear: cannot apply " + to_string(w.shape()) + " + " + to_string(b.shape()) + " to " +
                         to_string(x.shape()));
    }
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;
    const auto m = static_cast<Eigen::Index>(x.dim(0));
    const auto k = static_cast<Eigen::Index>(x.dim(1));
    const auto n = static_cast<Eigen::Index>(w.dim(1));
    const auto xv = x.storage();
    const auto wv = w.storage();
    const auto bv = b.storage();

    std::vector<double> out(static_cast<std::size_t>(m * n));
    MMap o(out.data(), m, n);
    o.noalias() = CMap(xv->data(), m, k) * CMap(wv->data(), k, n);
    o.rowwise() += Eigen::Map<const Row>(bv->data(), n);

    return Tape::make("linear", Shape{x.dim(0), w.dim(1)}, std::move(out), {&x, &w, &b},
                      [x, w, b, xv, wv, m, k, n](std::span<const double> g, GradSink& sink) {
                          CMap G(g.data(), m, n);
                          if (double* gx = sink.slot(x)) MMap(gx, m, k).noalias() += G * CMap(wv->data(), k, n).transpose();
                          if (double* gw = sink.slot(w)) MMap(gw, k, n).noalias() += CMap(xv->data(), m, k).transpose() * G;
                          // plain loop: Eigen's vectorized reductions peel by alignment, which varies per run
                          if (double* gb = sink.slot(b)) {
                              for (Eigen::Index r = 0; r < m; ++r) {
                                  for (Eigen::Index c = 0; c < n; ++c) gb[c] += g[static_cast<std::size_t>(r * n + c)];
                              }
                          }
                      });
}

/// Select rows along axis 0: output row i is input row indices[i]. Repeated indices
/// are allowed; the backward pass accumulates into the source rows.
inline Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices) {
    if (a.rank() == 0) throw ShapeError("gather: scalar input");
    const std::size_t rows = a.dim(0);
    const std::size_t width = rows == 0 ? 0 : a.size() / rows;
    for (std::size_t idx : *indices) {
        if (idx >= rows) {
            throw IndexError("gather: index " + std::to_string(idx) + " out of bounds for " + std::to_string(rows) + " rows");
        }
    }
    Shape shape = a.shape();
    shape[0] = indices->size();
    std::vector<double> out(indices->size() * width);
    const auto in = a.values();
    for (std::size_t i = 0; i < indices->size(); ++i) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((*indices)[i] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    return Tape::make("gather", std::move(shape), std::move(out), {&a},
                      [a, indices, width](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.slot(a);
                          for (std::size_t i = 0; i < indices->size(); ++i) {
                              double* dst = ga + (*indices)[i] * width;
                              const double* src = g.data() + i * width;
                              for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                          }
                      });
}

inline Tensor gather(const Tensor& a, std::vector<std::size_t> indices) {
    return gather(a, std::make_shared<const std::vector<std::size_t>>(std::move(indices)));
}

inline Tensor gather(const Tensor& a, std::initializer_list<std::size_t> indices) {
    return gather(a, std::vector<std::size_t>(indices));
}

} // namespace s3im
