#include "lgpt/numerics/ops.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/kernels.hpp"

#include <cmath>
#include <numbers>

namespace lgpt {
namespace {

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

class MatMul final : public Op {
public:
    std::string name() const override { return "matmul"; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (a.rank() < 1 || b.rank() != 2 || a.cols() != b.dim(0)) {
            throw ShapeError("cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
        }
        Shape shape = a.shape();
        shape.back() = b.dim(1);
        Tensor out(shape);
        kernels::gemm(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.dim(1));
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t n = a.rows(), k = a.cols(), m = b.dim(1);
        if (grads[0]) kernels::gemm_bt(g.data(), b.data(), grads[0]->data(), n, m, k, true);
        if (grads[1]) kernels::gemm_at(a.data(), g.data(), grads[1]->data(), n, k, m, true);
    }
};

class MatMulNT final : public Op {
public:
    std::string name() const override { return "matmul_nt"; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (a.rank() < 1 || b.rank() != 2 || a.cols() != b.dim(1)) {
            throw ShapeError("cannot multiply " + shape_string(a.shape()) + " by the transpose of " +
                             shape_string(b.shape()));
        }
        Shape shape = a.shape();
        shape.back() = b.dim(0);
        Tensor out(shape);
        kernels::gemm_bt(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.dim(0));
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t n = a.rows(), k = a.cols(), m = b.dim(0);
        if (grads[0]) kernels::gemm(g.data(), b.data(), grads[0]->data(), n, m, k, true);
        if (grads[1]) kernels::gemm_at(g.data(), a.data(), grads[1]->data(), n, m, k, true);
    }
};

enum class BinaryKind { add, sub, mul };

class Binary final : public Op {
public:
    explicit Binary(BinaryKind kind) : kind_(kind) {}
    std::string name() const override {
        switch (kind_) {
        case BinaryKind::add: return "add";
        case BinaryKind::sub: return "sub";
        default: return "mul";
        }
    }
    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (!is_suffix(b.shape(), a.shape())) {
            throw ShapeError("cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
        }
        Tensor out(a.shape());
        const std::size_t inner = b.size();
        if (inner == 0) return out;
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t base = 0; base < a.size(); base += inner) {
            for (std::size_t j = 0; j < inner; ++j) {
                const double x = pa[base + j], y = pb[j];
                po[base + j] = kind_ == BinaryKind::add ? x + y : kind_ == BinaryKind::sub ? x - y : x * y;
            }
        }
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t inner = b.size();
        if (inner == 0) return;
        for (std::size_t base = 0; base < a.size(); base += inner) {
            for (std::size_t j = 0; j < inner; ++j) {
                const double gv = g[base + j];
                switch (kind_) {
                case BinaryKind::add:
                    if (grads[0]) (*grads[0])[base + j] += gv;
                    if (grads[1]) (*grads[1])[j] += gv;
                    break;
                case BinaryKind::sub:
                    if (grads[0]) (*grads[0])[base + j] += gv;
                    if (grads[1]) (*grads[1])[j] -= gv;
                    break;
                case BinaryKind::mul:
                    if (grads[0]) (*grads[0])[base + j] += gv * b[j];
                    if (grads[1]) (*grads[1])[j] += gv * a[base + j];
                    break;
                }
            }
        }
    }

private:
    BinaryKind kind_;
};

class Scale final : public Op {
public:
    explicit Scale(double factor) : factor_(factor) {}
    std::string name() const override { return "scale"; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        Tensor out = *in[0];
        for (auto& v : out.storage()) v *= factor_;
        return out;
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor_ * g[i];
    }

private:
    double factor_;
};

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)

class UnaryOp final : public Op {
public:
    explicit UnaryOp(Unary kind) : kind_(kind) {}
    std::string name() const override {
        static const char* names[] = {"tanh", "relu", "gelu", "elu", "silu", "sigmoid", "abs", "square", "exp", "log"};
        return names[static_cast<int>(kind_)];
    }
    Tensor forward(std::span<const Tensor* const> in) const override {
        Tensor out = *in[0];
        for (auto& v : out.storage()) v = apply(v);
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        const Tensor& x = *in[0];
        for (std::size_t i = 0; i < x.size(); ++i) (*grads[0])[i] += g[i] * derivative(x[i], out[i]);
    }

private:
    double apply(double x) const {
        switch (kind_) {
        case Unary::tanh: return std::tanh(x);
        case Unary::relu: return x > 0.0 ? x : 0.0;
        case Unary::gelu: return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
        case Unary::elu: return x > 0.0 ? x : std::expm1(x);
        case Unary::silu: return x / (1.0 + std::exp(-x));
        case Unary::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Unary::abs: return std::abs(x);
        case Unary::square: return x * x;
        case Unary::exp: return std::exp(x);
        case Unary::log: return std::log(x);
        }
        return x;
    }
    double derivative(double x, double y) const {
        switch (kind_) {
        case Unary::tanh: return 1.0 - y * y;
        case Unary::relu: return x > 0.0 ? 1.0 : 0.0;
        case Unary::gelu: {
            const double u = kGeluC * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        }
        case Unary::elu: return x > 0.0 ? 1.0 : y + 1.0;
        case Unary::silu: {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        }
        case Unary::sigmoid: return y * (1.0 - y);
        case Unary::abs: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        case Unary::square: return 2.0 * x;
        case Unary::exp: return y;
        case Unary::log: return 1.0 / x;
        }
        return 0.0;
    }

    Unary kind_;
};

class Reduce final : public Op {
public:
    explicit Reduce(bool average) : average_(average) {}
    std::string name() const override { return average_ ? "mean" : "sum"; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& x = *in[0];
        if (average_ && x.size() == 0) throw ShapeError("mean of empty tensor");
        double s = 0.0;
        for (double v : x.values()) s += v;
        return Tensor::scalar(average_ ? s / static_cast<double>(x.size()) : s);
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        const double d = average_ ? g[0] / static_cast<double>(in[0]->size()) : g[0];
        for (auto& v : grads[0]->storage()) v += d;
    }

private:
    bool average_;
};

class Reshape final : public Op {
public:
    explicit Reshape(Shape shape) : shape_(std::move(shape)) {}
    std::string name() const override { return "reshape"; }
    Tensor forward(std::span<const Tensor* const> in) const override { return in[0]->reshaped(shape_); }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
    }

private:
    Shape shape_;
};

class StopGradient final : public Op {
public:
    std::string name() const override { return "stop_gradient"; }
    Tensor forward(std::span<const Tensor* const> in) const override { return *in[0]; }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor&,
                  std::span<Tensor* const>) const override {}
};

class Concat final : public Op {
public:
    explicit Concat(std::size_t axis) : axis_(axis) {}
    std::string name() const override { return "concat"; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        if (in.empty()) throw ShapeError("concat of nothing");
        Shape shape = in[0]->shape();
        if (axis_ >= shape.size()) throw ShapeError("concat axis out of range");
        std::size_t total = 0;
        for (const Tensor* t : in) {
            if (t->rank() != shape.size()) throw ShapeError("concat rank mismatch");
            for (std::size_t d = 0; d < shape.size(); ++d) {
                if (d != axis_ && t->dim(d) != shape[d]) {
                    throw ShapeError("concat extent mismatch: " + shape_string(t->shape()) + " vs " +
                                     shape_string(shape));
                }
            }
            total += t->dim(axis_);
        }
        shape[axis_] = total;
        Tensor out(shape);
        const std::size_t outer = outer_size(shape);
        const std::size_t inner = inner_size(shape);
        std::size_t offset = 0;
        for (const Tensor* t : in) {
            const std::size_t block = t->dim(axis_) * inner;
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(t->data() + o * block, block, out.data() + o * total * inner + offset);
            }
            offset += block;
        }
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const std::size_t outer = outer_size(out.shape());
        const std::size_t inner = inner_size(out.shape());
        const std::size_t total = out.dim(axis_);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            const std::size_t block = in[i]->dim(axis_) * inner;
            if (grads[i]) {
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = g.data() + o * total * inner + offset;
                    double* dst = grads[i]->data() + o * block;
                    for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                }
            }
            offset += block;
        }
    }

private:
    std::size_t outer_size(const Shape& s) const {
        std::size_t n = 1;
        for (std::size_t d = 0; d < axis_; ++d) n *= s[d];
        return n;
    }
    std::size_t inner_size(const Shape& s) const {
        std::size_t n = 1;
        for (std::size_t d = axis_ + 1; d < s.size(); ++d) n *= s[d];
        return n;
    }

    std::size_t axis_;
};

class GatherRows final : public Op {
public:
    explicit GatherRows(std::vector<std::size_t> rows, std::string label = "gather_rows")
        : rows_(std::move(rows)), label_(std::move(label)) {}
    std::string name() const override { return label_; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& x = *in[0];
        if (x.rank() < 1) throw ShapeError("cannot gather rows of a scalar");
        const std::size_t inner = x.dim(0) ? x.size() / x.dim(0) : 0;
        Shape shape = x.shape();
        shape[0] = rows_.size();
        Tensor out(shape);
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            if (rows_[i] >= x.dim(0)) {
                throw ShapeError("row " + std::to_string(rows_[i]) + " out of range for " + shape_string(x.shape()));
            }
            std::copy_n(x.data() + rows_[i] * inner, inner, out.data() + i * inner);
        }
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        const Tensor& x = *in[0];
        const std::size_t inner = x.dim(0) ? x.size() / x.dim(0) : 0;
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            double* dst = grads[0]->data() + rows_[i] * inner;
            const double* src = g.data() + i * inner;
            for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
        }
    }

private:
    std::vector<std::size_t> rows_;
    std::string label_;
};

} // namespace

Var matmul(Var a, Var b) { return a.graph().apply(std::make_shared<MatMul>(), {a, b}); }
Var matmul_nt(Var a, Var b) { return a.graph().apply(std::make_shared<MatMulNT>(), {a, b}); }
Var add(Var a, Var b) { return a.graph().apply(std::make_shared<Binary>(BinaryKind::add), {a, b}); }
Var sub(Var a, Var b) { return a.graph().apply(std::make_shared<Binary>(BinaryKind::sub), {a, b}); }
Var mul(Var a, Var b) { return a.graph().apply(std::make_shared<Binary>(BinaryKind::mul), {a, b}); }
Var scale(Var a, double factor) { return a.graph().apply(std::make_shared<Scale>(factor), {a}); }
Var unary(Var x, Unary kind) { return x.graph().apply(std::make_shared<UnaryOp>(kind), {x}); }
Var sum(Var x) { return x.graph().apply(std::make_shared<Reduce>(false), {x}); }
Var mean(Var x) { return x.graph().apply(std::make_shared<Reduce>(true), {x}); }
Var reshape(Var x, Shape shape) { return x.graph().apply(std::make_shared<Reshape>(std::move(shape)), {x}); }
Var stop_gradient(Var x) { return x.graph().apply(std::make_shared<StopGradient>(), {x}); }

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    return parts.front().graph().apply(std::make_shared<Concat>(axis), parts);
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    if (begin > end) throw ShapeError("slice begin after end");
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    return x.graph().apply(std::make_shared<GatherRows>(std::move(rows), "slice_rows"), {x});
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
    return x.graph().apply(std::make_shared<GatherRows>(std::move(rows)), {x});
}

Var embedding(Var table, std::vector<std::size_t> ids) {
    if (table.value().rank() != 2) throw ShapeError("embedding table must be rank 2");
    return table.graph().apply(std::make_shared<GatherRows>(std::move(ids), "embedding"), {table});
}

} // namespace lgpt
