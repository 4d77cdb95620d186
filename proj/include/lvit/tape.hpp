#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lvit/errors.hpp"
#include "lvit/rng.hpp"
#include "lvit/tensor.hpp"

namespace lvit {

/// Named trainable tensor with a gradient accumulator of identical shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() {
        for (double& g : grad.data) g = 0.0;
    }
};

inline void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

enum class OpKind {
    kLeaf,
    kMatMul,
    kTranspose,
    kReshape,
    kConcat,
    kSlice,
    kAdd,
    kAddRow,
    kScale,
    kCMul,
    kSoftmax,
    kLayerNorm,
    kGelu,
    kDropout,
    kReduceSum,
    kReduceMean,
    kCrossEntropy,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kMatMul: return "matmul";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kReshape: return "reshape";
        case OpKind::kConcat: return "concat";
        case OpKind::kSlice: return "slice";
        case OpKind::kAdd: return "add";
        case OpKind::kAddRow: return "add_row";
        case OpKind::kScale: return "scale";
        case OpKind::kCMul: return "cmul";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kLayerNorm: return "layer_norm";
        case OpKind::kGelu: return "gelu";
        case OpKind::kDropout: return "dropout";
        case OpKind::kReduceSum: return "reduce_sum";
        case OpKind::kReduceMean: return "reduce_mean";
        case OpKind::kCrossEntropy: return "cross_entropy";
    }
    return "?";
}

/// One recorded operation: kind, input/output node indices, and whatever the
/// backward rule needs (masks, normalization stats, labels, constants).
struct TapeEntry {
    OpKind kind = OpKind::kLeaf;
    std::vector<std::uint32_t> inputs;
    std::uint32_t output = 0;
    std::vector<double> saved;
    std::vector<std::int64_t> iargs;
    double darg = 0.0;
    Parameter* param = nullptr;
};

namespace detail {

inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubicCoeff = 0.044715;

inline double gelu_value(double x) {
    const double u = kGeluSqrt2OverPi * (x + kGeluCubicCoeff * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
    const double u = kGeluSqrt2OverPi * (x + kGeluCubicCoeff * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubicCoeff * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

/// Element-order-preserving copy with two axes swapped.
inline Tensor transpose_values(const Tensor& x, std::size_t ax0, std::size_t ax1) {
    Shape out_shape = x.shape;
    std::swap(out_shape[ax0], out_shape[ax1]);
    Tensor out(out_shape);
    const auto in_strides = strides_of(x.shape);
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t o = 0; o < out.numel(); ++o) {
        std::size_t in_off = 0;
        for (std::size_t d = 0; d < out_shape.size(); ++d) {
            const std::size_t src = d == ax0 ? ax1 : d == ax1 ? ax0 : d;
            in_off += idx[d] * in_strides[src];
        }
        out.data[o] = x.data[in_off];
        for (std::size_t d = out_shape.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

struct AxisSplit {
    std::size_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (d < axis)
            s.outer *= shape[d];
        else if (d == axis)
            s.axis = shape[d];
        else
            s.inner *= shape[d];
    }
    return s;
}

}  // namespace detail

/// Reverse-accumulation record. Ops append entries in execution order;
/// backward() replays them once, in reverse, accumulating d(loss)/d(param)
/// into every watched Parameter.
///
/// A tape is single-threaded; independent tapes over disjoint parameters may
/// run concurrently.
class Tape {
public:
    Tape() : serial_(next_serial()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Records a constant leaf (no gradient target).
    Tensor constant(Tensor v) {
        TapeEntry e;
        e.kind = OpKind::kLeaf;
        return push(std::move(e), std::move(v));
    }

    /// Records a parameter leaf; repeated calls reuse the same node so every
    /// use of the parameter shares one gradient slot.
    Tensor watch(Parameter& p) {
        auto it = watched_.find(&p);
        if (it != watched_.end()) {
            Tensor t = values_[it->second];
            t.node = make_id(it->second);
            return t;
        }
        TapeEntry e;
        e.kind = OpKind::kLeaf;
        e.param = &p;
        Tensor out = push(std::move(e), p.value);
        watched_.emplace(&p, index_of(out));
        return out;
    }

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
            throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
        }
        const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
        Tensor out({m, n});
        matmul_values(a.data.data(), b.data.data(), out.data.data(), m, k, n);
        TapeEntry e;
        e.kind = OpKind::kMatMul;
        e.inputs = {index_of(a), index_of(b)};
        return push(std::move(e), std::move(out));
    }

    Tensor transpose(const Tensor& x, std::size_t ax0 = 0, std::size_t ax1 = 1) {
        if (ax0 >= x.rank() || ax1 >= x.rank()) {
            throw ShapeError("transpose axes (" + std::to_string(ax0) + "," + std::to_string(ax1) +
                             ") out of range for shape " + shape_str(x.shape));
        }
        TapeEntry e;
        e.kind = OpKind::kTranspose;
        e.inputs = {index_of(x)};
        e.iargs = {static_cast<std::int64_t>(ax0), static_cast<std::int64_t>(ax1)};
        return push(std::move(e), detail::transpose_values(x, ax0, ax1));
    }

    Tensor reshape(const Tensor& x, Shape shape) {
        if (numel_of(shape) != x.numel()) {
            throw ShapeError("reshape to " + shape_str(shape) + " changes element count of " +
                             shape_str(x.shape));
        }
        Tensor out(std::move(shape), x.data);
        TapeEntry e;
        e.kind = OpKind::kReshape;
        e.inputs = {index_of(x)};
        return push(std::move(e), std::move(out));
    }

    Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
        if (xs.empty()) throw ShapeError("concat of zero tensors");
        const Tensor& first = xs.front();
        if (axis >= first.rank()) {
            throw ShapeError("concat axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(first.shape));
        }
        Shape out_shape = first.shape;
        for (std::size_t j = 1; j < xs.size(); ++j) {
            if (xs[j].rank() != first.rank()) {
                throw ShapeError("concat rank mismatch: " + shape_str(first.shape) + " vs " +
                                 shape_str(xs[j].shape));
            }
            for (std::size_t d = 0; d < first.rank(); ++d) {
                if (d != axis && xs[j].shape[d] != first.shape[d]) {
                    throw ShapeError("concat shape mismatch off axis: " + shape_str(first.shape) +
                                     " vs " + shape_str(xs[j].shape));
                }
            }
            out_shape[axis] += xs[j].shape[axis];
        }
        Tensor out(out_shape);
        const auto os = detail::split_at(out_shape, axis);
        TapeEntry e;
        e.kind = OpKind::kConcat;
        e.iargs = {static_cast<std::int64_t>(axis)};
        std::size_t axis_offset = 0;
        for (const Tensor& x : xs) {
            e.inputs.push_back(index_of(x));
            const auto s = detail::split_at(x.shape, axis);
            for (std::size_t o = 0; o < s.outer; ++o) {
                const double* src = x.data.data() + o * s.axis * s.inner;
                double* dst = out.data.data() + (o * os.axis + axis_offset) * os.inner;
                std::copy(src, src + s.axis * s.inner, dst);
            }
            axis_offset += s.axis;
        }
        return push(std::move(e), std::move(out));
    }

    Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
        if (axis >= x.rank() || start + len > x.shape[axis] || len == 0) {
            throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") on axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(x.shape));
        }
        Shape out_shape = x.shape;
        out_shape[axis] = len;
        Tensor out(out_shape);
        const auto s = detail::split_at(x.shape, axis);
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = x.data.data() + (o * s.axis + start) * s.inner;
            std::copy(src, src + len * s.inner, out.data.data() + o * len * s.inner);
        }
        TapeEntry e;
        e.kind = OpKind::kSlice;
        e.inputs = {index_of(x)};
        e.iargs = {static_cast<std::int64_t>(axis), static_cast<std::int64_t>(start),
                   static_cast<std::int64_t>(len)};
        return push(std::move(e), std::move(out));
    }

    Tensor add(const Tensor& a, const Tensor& b) {
        if (!a.same_shape(b)) {
            throw ShapeError("add shape mismatch: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
        }
        Tensor out(a.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
        TapeEntry e;
        e.kind = OpKind::kAdd;
        e.inputs = {index_of(a), index_of(b)};
        return push(std::move(e), std::move(out));
    }

    /// Broadcast add of a vector over the last axis.
    Tensor add_row(const Tensor& x, const Tensor& v) {
        const std::size_t d = x.shape.empty() ? 0 : x.shape.back();
        if (v.rank() != 1 || v.numel() != d) {
            throw ShapeError("add_row vector " + shape_str(v.shape) +
                             " does not match last axis of " + shape_str(x.shape));
        }
        Tensor out(x.shape);
        const std::size_t rows = x.numel() / d;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) out.data[r * d + c] = x.data[r * d + c] + v.data[c];
        TapeEntry e;
        e.kind = OpKind::kAddRow;
        e.inputs = {index_of(x), index_of(v)};
        return push(std::move(e), std::move(out));
    }

    Tensor scale(const Tensor& x, double c) {
        Tensor out(x.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = c * x.data[i];
        TapeEntry e;
        e.kind = OpKind::kScale;
        e.inputs = {index_of(x)};
        e.darg = c;
        return push(std::move(e), std::move(out));
    }

    /// Elementwise product with a constant (non-differentiated) tensor.
    Tensor cmul(const Tensor& x, const Tensor& weights) {
        if (!x.same_shape(weights)) {
            throw ShapeError("cmul shape mismatch: " + shape_str(x.shape) + " vs " +
                             shape_str(weights.shape));
        }
        Tensor out(x.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.data[i] * weights.data[i];
        TapeEntry e;
        e.kind = OpKind::kCMul;
        e.inputs = {index_of(x)};
        e.saved = weights.data;
        return push(std::move(e), std::move(out));
    }

    /// Numerically stable softmax over the last axis.
    Tensor softmax_lastaxis(const Tensor& x) {
        if (x.rank() == 0 || x.shape.back() == 0) {
            throw ShapeError("softmax requires a non-empty last axis, got " + shape_str(x.shape));
        }
        const std::size_t n = x.shape.back();
        const std::size_t rows = x.numel() / n;
        Tensor out(x.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* in = x.data.data() + r * n;
            double* o = out.data.data() + r * n;
            double mx = in[0];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                o[i] = std::exp(in[i] - mx);
                sum += o[i];
            }
            for (std::size_t i = 0; i < n; ++i) o[i] /= sum;
        }
        TapeEntry e;
        e.kind = OpKind::kSoftmax;
        e.inputs = {index_of(x)};
        return push(std::move(e), std::move(out));
    }

    /// Per-row normalization over the last axis followed by elementwise gain
    /// and bias.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5) {
        if (eps <= 0.0) throw ValueError("layer_norm eps must be positive");
        const std::size_t d = x.shape.empty() ? 0 : x.shape.back();
        if (gain.numel() != d || bias.numel() != d) {
            throw ShapeError("layer_norm gain " + shape_str(gain.shape) + " / bias " +
                             shape_str(bias.shape) + " do not match last axis of " +
                             shape_str(x.shape));
        }
        const std::size_t rows = x.numel() / d;
        Tensor out(x.shape);
        TapeEntry e;
        e.kind = OpKind::kLayerNorm;
        e.inputs = {index_of(x), index_of(gain), index_of(bias)};
        e.darg = eps;
        e.saved.resize(rows * (d + 1));
        for (std::size_t r = 0; r < rows; ++r) {
            const double* in = x.data.data() + r * d;
            double mean = 0.0;
            for (std::size_t i = 0; i < d; ++i) mean += in[i];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
            var /= static_cast<double>(d);
            const double rstd = 1.0 / std::sqrt(var + eps);
            double* slot = e.saved.data() + r * (d + 1);
            slot[0] = rstd;
            for (std::size_t i = 0; i < d; ++i) {
                const double xhat = (in[i] - mean) * rstd;
                slot[1 + i] = xhat;
                out.data[r * d + i] = xhat * gain.data[i] + bias.data[i];
            }
        }
        return push(std::move(e), std::move(out));
    }

    /// Elementwise GELU, tanh approximation.
    Tensor gelu(const Tensor& x) {
        Tensor out(x.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = detail::gelu_value(x.data[i]);
        TapeEntry e;
        e.kind = OpKind::kGelu;
        e.inputs = {index_of(x)};
        return push(std::move(e), std::move(out));
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability p and survivors are scaled by 1/(1-p); in eval mode (or at
    /// p = 0) the op is an exact identity and consumes no rng draws. Mask
    /// draws consume the rng in row-major element order.
    Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
        if (p < 0.0 || p >= 1.0) throw ValueError("dropout rate must be in [0,1)");
        TapeEntry e;
        e.kind = OpKind::kDropout;
        e.inputs = {index_of(x)};
        if (!training || p == 0.0) {
            Tensor out(x.shape, x.data);
            return push(std::move(e), std::move(out));
        }
        const double keep_scale = 1.0 / (1.0 - p);
        Tensor out(x.shape);
        e.saved.resize(x.numel());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double m = rng.bernoulli(p) ? 0.0 : keep_scale;
            e.saved[i] = m;
            out.data[i] = x.data[i] * m;
        }
        return push(std::move(e), std::move(out));
    }

    /// Sum reduction over one axis, or over all elements when axis is -1.
    Tensor reduce_sum(const Tensor& x, int axis = -1) { return reduce(x, axis, false); }

    /// Mean reduction over one axis, or over all elements when axis is -1.
    Tensor reduce_mean(const Tensor& x, int axis = -1) { return reduce(x, axis, true); }

    /// Mean over the batch of -log softmax(logits_b)[label_b], computed via a
    /// stable log-sum-exp. Output is a scalar tensor of shape [1].
    Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
        if (logits.rank() != 2) {
            throw ShapeError("cross_entropy expects [batch x classes] logits, got " +
                             shape_str(logits.shape));
        }
        const std::size_t b = logits.shape[0], k = logits.shape[1];
        if (labels.size() != b) {
            throw ContractError("cross_entropy got " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(b));
        }
        TapeEntry e;
        e.kind = OpKind::kCrossEntropy;
        e.inputs = {index_of(logits)};
        e.saved.resize(b * k);
        double loss = 0.0;
        for (std::size_t r = 0; r < b; ++r) {
            if (labels[r] >= k) {
                throw ContractError("label " + std::to_string(labels[r]) + " out of range for " +
                                    std::to_string(k) + " classes at sample " + std::to_string(r));
            }
            e.iargs.push_back(static_cast<std::int64_t>(labels[r]));
            const double* row = logits.data.data() + r * k;
            double mx = row[0];
            for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
            double sum = 0.0;
            for (std::size_t i = 0; i < k; ++i) sum += std::exp(row[i] - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t i = 0; i < k; ++i) e.saved[r * k + i] = std::exp(row[i] - lse);
            loss += lse - row[labels[r]];
        }
        loss /= static_cast<double>(b);
        return push(std::move(e), Tensor::scalar(loss));
    }

    /// Accumulates d(loss)/d(param) into every watched Parameter's grad.
    /// May be called repeatedly on the same record; contributions add.
    void backward(const Tensor& loss) {
        const std::uint32_t root = index_of(loss);
        if (values_[root].numel() != 1) {
            throw ContractError("backward expects a scalar loss, got shape " +
                                shape_str(values_[root].shape));
        }
        grads_.assign(values_.size(), {});
        grad_buf(root)[0] = 1.0;
        for (std::size_t i = entries_.size(); i-- > 0;) {
            const TapeEntry& e = entries_[i];
            const auto& gout = grads_[e.output];
            if (gout.empty()) continue;
            const double fault = (fault_kind_ && *fault_kind_ == e.kind) ? fault_factor_ : 1.0;
            apply_backward(e, gout, fault);
        }
    }

    // --- record inspection -------------------------------------------------

    std::size_t size() const { return entries_.size(); }
    const TapeEntry& entry(std::size_t i) const { return entries_[i]; }
    const Tensor& value(std::size_t node_index) const { return values_[node_index]; }

    std::uint32_t index_of(const Tensor& t) const {
        if (t.node < 0) throw ContractError("tensor is not attached to a computation record");
        const auto serial = static_cast<std::uint32_t>(t.node >> 32);
        const auto idx = static_cast<std::uint32_t>(t.node & 0xffffffff);
        if (serial != serial_ || idx >= values_.size()) {
            throw ContractError("tensor does not belong to this computation record");
        }
        return idx;
    }

    bool all_values_finite() const {
        for (const Tensor& v : values_) {
            if (!all_finite(v)) return false;
        }
        return true;
    }

    /// Test hook: scales the gradient contributions written by every entry of
    /// the given kind, deliberately corrupting that backward rule.
    void inject_backward_fault(OpKind kind, double factor) {
        fault_kind_ = kind;
        fault_factor_ = factor;
    }

private:
    static std::uint32_t next_serial() {
        static std::atomic<std::uint32_t> counter{1};
        return counter.fetch_add(1);
    }

    std::int64_t make_id(std::uint32_t idx) const {
        return (static_cast<std::int64_t>(serial_) << 32) | idx;
    }

    Tensor push(TapeEntry e, Tensor value) {
        const auto idx = static_cast<std::uint32_t>(values_.size());
        e.output = idx;
        value.node = make_id(idx);
        values_.push_back(value);
        entries_.push_back(std::move(e));
        return value;
    }

    std::vector<double>& grad_buf(std::uint32_t idx) {
        if (grads_[idx].empty()) grads_[idx].assign(values_[idx].numel(), 0.0);
        return grads_[idx];
    }

    static void matmul_values(const double* a, const double* b, double* c, std::size_t m,
                              std::size_t k, std::size_t n) {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = c + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = a[i * k + kk];
                if (av == 0.0) continue;
                const double* brow = b + kk * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    Tensor reduce(const Tensor& x, int axis, bool mean) {
        TapeEntry e;
        e.kind = mean ? OpKind::kReduceMean : OpKind::kReduceSum;
        e.inputs = {index_of(x)};
        e.iargs = {axis};
        if (axis < 0) {
            double acc = 0.0;
            for (double v : x.data) acc += v;
            if (mean) acc /= static_cast<double>(x.numel());
            return push(std::move(e), Tensor::scalar(acc));
        }
        const auto ax = static_cast<std::size_t>(axis);
        if (ax >= x.rank()) {
            throw ShapeError("reduce axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(x.shape));
        }
        Shape out_shape;
        for (std::size_t d = 0; d < x.rank(); ++d) {
            if (d != ax) out_shape.push_back(x.shape[d]);
        }
        if (out_shape.empty()) out_shape = {1};
        Tensor out(out_shape);
        const auto s = detail::split_at(x.shape, ax);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                double acc = 0.0;
                for (std::size_t a = 0; a < s.axis; ++a)
                    acc += x.data[(o * s.axis + a) * s.inner + i];
                if (mean) acc /= static_cast<double>(s.axis);
                out.data[o * s.inner + i] = acc;
            }
        }
        return push(std::move(e), std::move(out));
    }

    void apply_backward(const TapeEntry& e, const std::vector<double>& gout, double fault) {
        switch (e.kind) {
            case OpKind::kLeaf: {
                if (e.param) {
                    for (std::size_t i = 0; i < gout.size(); ++i)
                        e.param->grad.data[i] += fault * gout[i];
                }
                return;
            }
            case OpKind::kMatMul: {
                const Tensor& a = values_[e.inputs[0]];
                const Tensor& b = values_[e.inputs[1]];
                const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
                auto& ga = grad_buf(e.inputs[0]);
                auto& gb = grad_buf(e.inputs[1]);
                // dA += dC * B^T ; dB += A^T * dC
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = gout.data() + i * n;
                        const double* brow = b.data.data() + kk * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += fault * acc;
                    }
                }
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double* gbrow = gb.data() + kk * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = fault * a.data[i * k + kk];
                        if (av == 0.0) continue;
                        const double* grow = gout.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
                return;
            }
            case OpKind::kTranspose: {
                const auto ax0 = static_cast<std::size_t>(e.iargs[0]);
                const auto ax1 = static_cast<std::size_t>(e.iargs[1]);
                Tensor gy(values_[e.output].shape, gout);
                Tensor gx = detail::transpose_values(gy, ax0, ax1);
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += fault * gx.data[i];
                return;
            }
            case OpKind::kReshape: {
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += fault * gout[i];
                return;
            }
            case OpKind::kConcat: {
                const auto axis = static_cast<std::size_t>(e.iargs[0]);
                const auto os = detail::split_at(values_[e.output].shape, axis);
                std::size_t axis_offset = 0;
                for (std::uint32_t input : e.inputs) {
                    const auto s = detail::split_at(values_[input].shape, axis);
                    auto& gin = grad_buf(input);
                    for (std::size_t o = 0; o < s.outer; ++o) {
                        const double* src = gout.data() + (o * os.axis + axis_offset) * os.inner;
                        double* dst = gin.data() + o * s.axis * s.inner;
                        for (std::size_t i = 0; i < s.axis * s.inner; ++i)
                            dst[i] += fault * src[i];
                    }
                    axis_offset += s.axis;
                }
                return;
            }
            case OpKind::kSlice: {
                const auto axis = static_cast<std::size_t>(e.iargs[0]);
                const auto start = static_cast<std::size_t>(e.iargs[1]);
                const auto len = static_cast<std::size_t>(e.iargs[2]);
                const auto s = detail::split_at(values_[e.inputs[0]].shape, axis);
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t o = 0; o < s.outer; ++o) {
                    const double* src = gout.data() + o * len * s.inner;
                    double* dst = gin.data() + (o * s.axis + start) * s.inner;
                    for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += fault * src[i];
                }
                return;
            }
            case OpKind::kAdd: {
                auto& ga = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += fault * gout[i];
                auto& gb = grad_buf(e.inputs[1]);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += fault * gout[i];
                return;
            }
            case OpKind::kAddRow: {
                const std::size_t d = values_[e.inputs[1]].numel();
                const std::size_t rows = gout.size() / d;
                auto& gx = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += fault * gout[i];
                auto& gv = grad_buf(e.inputs[1]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < d; ++c) gv[c] += fault * gout[r * d + c];
                return;
            }
            case OpKind::kScale: {
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += fault * e.darg * gout[i];
                return;
            }
            case OpKind::kCMul: {
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += fault * e.saved[i] * gout[i];
                return;
            }
            case OpKind::kSoftmax: {
                const Tensor& s = values_[e.output];
                const std::size_t n = s.shape.back();
                const std::size_t rows = s.numel() / n;
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* sv = s.data.data() + r * n;
                    const double* gy = gout.data() + r * n;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) dot += gy[i] * sv[i];
                    for (std::size_t i = 0; i < n; ++i)
                        gin[r * n + i] += fault * sv[i] * (gy[i] - dot);
                }
                return;
            }
            case OpKind::kLayerNorm: {
                const Tensor& gain = values_[e.inputs[1]];
                const std::size_t d = gain.numel();
                const std::size_t rows = gout.size() / d;
                auto& gx = grad_buf(e.inputs[0]);
                auto& gg = grad_buf(e.inputs[1]);
                auto& gb = grad_buf(e.inputs[2]);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* slot = e.saved.data() + r * (d + 1);
                    const double rstd = slot[0];
                    const double* xhat = slot + 1;
                    const double* gy = gout.data() + r * d;
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double dxhat = gy[i] * gain.data[i];
                        m1 += dxhat;
                        m2 += dxhat * xhat[i];
                        gg[i] += fault * gy[i] * xhat[i];
                        gb[i] += fault * gy[i];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const double dxhat = gy[i] * gain.data[i];
                        gx[r * d + i] += fault * rstd * (dxhat - m1 - xhat[i] * m2);
                    }
                }
                return;
            }
            case OpKind::kGelu: {
                const Tensor& x = values_[e.inputs[0]];
                auto& gin = grad_buf(e.inputs[0]);
                for (std::size_t i = 0; i < gin.size(); ++i)
                    gin[i] += fault * detail::gelu_derivative(x.data[i]) * gout[i];
                return;
            }
            case OpKind::kDropout: {
                auto& gin = grad_buf(e.inputs[0]);
                if (e.saved.empty()) {
                    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += fault * gout[i];
                } else {
                    for (std::size_t i = 0; i < gin.size(); ++i)
                        gin[i] += fault * e.saved[i] * gout[i];
                }
                return;
            }
            case OpKind::kReduceSum:
            case OpKind::kReduceMean: {
                const bool mean = e.kind == OpKind::kReduceMean;
                const Tensor& x = values_[e.inputs[0]];
                auto& gin = grad_buf(e.inputs[0]);
                const int axis = static_cast<int>(e.iargs[0]);
                if (axis < 0) {
                    const double g =
                        fault * gout[0] / (mean ? static_cast<double>(x.numel()) : 1.0);
                    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += g;
                } else {
                    const auto s = detail::split_at(x.shape, static_cast<std::size_t>(axis));
                    const double inv = mean ? 1.0 / static_cast<double>(s.axis) : 1.0;
                    for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t a = 0; a < s.axis; ++a)
                            for (std::size_t i = 0; i < s.inner; ++i)
                                gin[(o * s.axis + a) * s.inner + i] +=
                                    fault * inv * gout[o * s.inner + i];
                }
                return;
            }
            case OpKind::kCrossEntropy: {
                const Tensor& logits = values_[e.inputs[0]];
                const std::size_t b = logits.shape[0], k = logits.shape[1];
                auto& gin = grad_buf(e.inputs[0]);
                const double g = fault * gout[0] / static_cast<double>(b);
                for (std::size_t r = 0; r < b; ++r) {
                    const auto label = static_cast<std::size_t>(e.iargs[r]);
                    for (std::size_t i = 0; i < k; ++i) {
                        const double onehot = i == label ? 1.0 : 0.0;
                        gin[r * k + i] += g * (e.saved[r * k + i] - onehot);
                    }
                }
                return;
            }
        }
    }

    std::uint32_t serial_;
    std::vector<Tensor> values_;
    std::vector<TapeEntry> entries_;
    std::vector<std::vector<double>> grads_;
    std::unordered_map<Parameter*, std::uint32_t> watched_;
    std::optional<OpKind> fault_kind_;
    double fault_factor_ = 1.0;
};

struct GradCheckParamError {
    std::string name;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::vector<GradCheckParamError> per_param;
};

/// Compares reverse-mode gradients of a scalar-valued builder `f` against
/// central finite differences, entry by entry. `f` must be deterministic
/// (dropout disabled) and must watch the given parameters on the tape it is
/// handed. Relative error is |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                                  const std::vector<Parameter*>& params, double eps) {
    if (eps <= 0.0) throw ValueError("grad_check eps must be positive");
    zero_grads(params);
    {
        Tape tape;
        Tensor loss = f(tape);
        tape.backward(loss);
    }
    auto eval = [&]() {
        Tape tape;
        return f(tape).data[0];
    };
    GradCheckReport report;
    for (Parameter* p : params) {
        double param_err = 0.0;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double analytic = p->grad.data[i];
            if (!std::isfinite(analytic)) {
                throw NumericError("non-finite analytic gradient in parameter " + p->name);
            }
            const double orig = p->value.data[i];
            p->value.data[i] = orig + eps;
            const double fp = eval();
            p->value.data[i] = orig - eps;
            const double fm = eval();
            p->value.data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            if (!std::isfinite(numeric)) {
                throw NumericError("non-finite numeric gradient in parameter " + p->name);
            }
            const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            param_err = std::max(param_err, rel);
        }
        report.per_param.push_back({p->name, param_err});
        if (param_err >= report.max_rel_err) {
            if (param_err > report.max_rel_err || report.worst_param.empty()) {
                report.max_rel_err = param_err;
                report.worst_param = p->name;
            }
        }
    }
    return report;
}

}  // namespace lvit
