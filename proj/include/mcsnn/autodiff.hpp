#ifndef MCSNN_AUTODIFF_HPP
#define MCSNN_AUTODIFF_HPP

// Reverse-mode differentiation over row-major matrices. A Tape records every
// operation of an unrolled forward pass; backward() walks it in reverse and
// accumulates gradients into the Parameters that fed it. Rows are batch
// items, columns are features/neurons.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mcsnn/error.hpp"
#include "mcsnn/fixed_point.hpp"
#include "mcsnn/neurons.hpp"

namespace mcsnn::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// How a parameter is projected back into its legal range after an update.
enum class Constraint { none, decay, threshold };

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
    Constraint constraint = Constraint::none;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    void project() {
        switch (constraint) {
        case Constraint::decay: value = value.cwiseMax(0.0).cwiseMin(1.0); break;
        case Constraint::threshold: value = value.cwiseMax(kMinThreshold).cwiseMin(kMaxThreshold); break;
        case Constraint::none: break;
        }
    }
};

struct Var {
    int id = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    /// With record == false no backward closures are kept (inference).
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }

    Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

    Var parameter(Parameter& p) {
        Var v = push(p.value, record_ && p.trainable, nullptr);
        if (needs_grad(v)) nodes_[static_cast<std::size_t>(v.id)].sink = &p;
        return v;
    }

    Var push(Matrix value, bool needs_grad, Backward fn) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = record_ && needs_grad;
        if (n.needs_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

    const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    /// Gradient accumulator of a node, allocated as zeros on first use.
    Matrix& grad_sink(Var v) {
        auto& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates; parameter gradients are
    /// added to Parameter::grad.
    void backward(Var loss) {
        require(record_, "backward() on a tape that did not record");
        require(value(loss).size() == 1, "backward() needs a scalar loss");
        grad_sink(loss).setOnes();
        for (int id = loss.id; id >= 0; --id) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, id);
            if (n.sink) {
                if (n.sink->grad.size() == 0) n.sink->zero_grad();
                n.sink->grad += n.grad;
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Parameter* sink = nullptr;
        Backward backward;
    };

    bool record_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations

inline Var matmul(Tape& t, Var a, Var w) {
    Matrix out = t.value(a) * t.value(w);
    return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(w), [a, w](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_sink(a).noalias() += g * tp.value(w).transpose();
        if (tp.needs_grad(w)) tp.grad_sink(w).noalias() += tp.value(a).transpose() * g;
    });
}

/// a + b where b is a 1 x cols row broadcast over the batch.
inline Var add_row(Tape& t, Var a, Var b) {
    Matrix out = t.value(a).rowwise() + t.value(b).row(0);
    return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_sink(a) += g;
        if (tp.needs_grad(b)) tp.grad_sink(b) += g.colwise().sum();
    });
}

inline Var add(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) + t.value(b);
    return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_sink(a) += g;
        if (tp.needs_grad(b)) tp.grad_sink(b) += g;
    });
}

inline Var sub(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) - t.value(b);
    return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_sink(a) += g;
        if (tp.needs_grad(b)) tp.grad_sink(b) -= g;
    });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
    Matrix out = t.value(a).cwiseProduct(t.value(b));
    return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_sink(a) += g.cwiseProduct(tp.value(b));
        if (tp.needs_grad(b)) tp.grad_sink(b) += g.cwiseProduct(tp.value(a));
    });
}

inline Var scale(Tape& t, Var a, double k) {
    Matrix out = t.value(a) * k;
    return t.push(std::move(out), t.needs_grad(a), [a, k](Tape& tp, int self) { tp.grad_sink(a) += tp.grad(self) * k; });
}

/// Scales column j of `a` by r(0, j); a 1x1 `r` scales everything.
inline Var scale_cols(Tape& t, Var a, Var r) {
    const auto& av = t.value(a);
    const auto& rv = t.value(r);
    const bool scalar = rv.size() == 1;
    require(scalar || rv.cols() == av.cols(), "scale_cols width mismatch");
    Matrix out = scalar ? Matrix(av * rv(0, 0)) : Matrix(av.array().rowwise() * rv.row(0).array());
    return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(r), [a, r, scalar](Tape& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& rv2 = tp.value(r);
        if (tp.needs_grad(a)) {
            if (scalar)
                tp.grad_sink(a) += g * rv2(0, 0);
            else
                tp.grad_sink(a) += Matrix(g.array().rowwise() * rv2.row(0).array());
        }
        if (tp.needs_grad(r)) {
            Matrix prod = g.cwiseProduct(tp.value(a));
            if (scalar)
                tp.grad_sink(r)(0, 0) += prod.sum();
            else
                tp.grad_sink(r) += prod.colwise().sum();
        }
    });
}

inline Var sigmoid(Tape& t, Var a) {
    Matrix out = (1.0 + (-t.value(a).array()).exp()).inverse().matrix();
    return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int self) {
        const auto& y = tp.value(Var{self});
        tp.grad_sink(a) += Matrix(tp.grad(self).array() * y.array() * (1.0 - y.array()));
    });
}

inline Var tanh(Tape& t, Var a) {
    Matrix out = t.value(a).array().tanh().matrix();
    return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int self) {
        const auto& y = tp.value(Var{self});
        tp.grad_sink(a) += Matrix(tp.grad(self).array() * (1.0 - y.array().square()));
    });
}

struct SpikeOptions {
    int slope = kDefaultSurrogateSlope;
    /// Replace the Heaviside forward with the surrogate's primitive
    /// 0.5 + x/(1+k|x|) so finite differences see the same derivative as the
    /// backward pass.
    bool smooth = false;
};

/// spike = H(v - theta) with the fast-sigmoid surrogate derivative.
/// theta is 1 x cols (per neuron) or 1 x 1 (shared).
inline Var spike(Tape& t, Var v, Var theta, SpikeOptions opt) {
    const auto& vv = t.value(v);
    const auto& th = t.value(theta);
    const bool scalar = th.size() == 1;
    require(scalar || th.cols() == vv.cols(), "spike threshold width mismatch");
    Matrix x = scalar ? Matrix(vv.array() - th(0, 0)) : Matrix(vv.array().rowwise() - th.row(0).array());
    const double k = static_cast<double>(opt.slope);
    Matrix out = opt.smooth ? Matrix(0.5 + x.array() / (1.0 + k * x.array().abs()))
                            : Matrix((x.array() >= 0.0).cast<double>());
    const bool grad = t.needs_grad(v) || t.needs_grad(theta);
    return t.push(std::move(out), grad, [v, theta, x = std::move(x), k, scalar](Tape& tp, int self) {
        Matrix d = (1.0 + k * x.array().abs()).square().inverse().matrix();
        Matrix gd = tp.grad(self).cwiseProduct(d);
        if (tp.needs_grad(v)) tp.grad_sink(v) += gd;
        if (tp.needs_grad(theta)) {
            if (scalar)
                tp.grad_sink(theta)(0, 0) -= gd.sum();
            else
                tp.grad_sink(theta) -= gd.colwise().sum();
        }
    });
}

/// Straight-through fake quantization: forward snaps to the nearest value
/// of `format`, backward passes the gradient unchanged.
inline Var fake_quant(Tape& t, Var a, const FixedPointFormat& format) {
    Matrix out = t.value(a).unaryExpr([&](double x) { return fake_quantize(x, format); });
    return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int self) { tp.grad_sink(a) += tp.grad(self); });
}

/// fake_quant with a per-tensor power-of-two format of `bits` fitted to the
/// current values.
inline Var fake_quant_fit(Tape& t, Var a, int bits) {
    const auto& v = t.value(a);
    return fake_quant(t, a, fit_format(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), bits));
}

inline Var sum_all(Tape& t, Var a) {
    Matrix out(1, 1);
    out(0, 0) = t.value(a).sum();
    return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, int self) {
        tp.grad_sink(a).array() += tp.grad(self)(0, 0);
    });
}

/// Sum over rows of -log softmax(logits)[label]; labels hold one class index
/// per row.
inline Var softmax_ce(Tape& t, Var logits, std::vector<int> labels) {
    const auto& z = t.value(logits);
    require(static_cast<std::size_t>(z.rows()) == labels.size(), "softmax_ce needs one label per row");
    Matrix p(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        require(y >= 0 && y < z.cols(), "softmax_ce label out of range");
        const double m = z.row(r).maxCoeff();
        p.row(r) = (z.row(r).array() - m).exp().matrix();
        const double total = p.row(r).sum();
        p.row(r) /= total;
        loss -= z(r, y) - m - std::log(total);
    }
    Matrix out(1, 1);
    out(0, 0) = loss;
    return t.push(std::move(out), t.needs_grad(logits),
                  [logits, p = std::move(p), labels = std::move(labels)](Tape& tp, int self) {
                      Matrix g = p;
                      for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
                      tp.grad_sink(logits) += g * tp.grad(self)(0, 0);
                  });
}

} // namespace mcsnn::ad

#endif
