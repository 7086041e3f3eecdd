#include "lgpt/numerics/ops.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace lgpt {
namespace {

// Normalization over the last axis (layer norm) or over rows (batch norm).
class Normalize final : public Op {
public:
    Normalize(bool over_rows, bool affine, double eps) : over_rows_(over_rows), affine_(affine), eps_(eps) {}
    std::string name() const override { return over_rows_ ? "batch_norm" : "layer_norm"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& x = *in[0];
        check(in);
        Tensor out(x.shape());
        const std::size_t groups = group_count(x), len = group_len(x);
        std::vector<double> buf(len);
        for (std::size_t gidx = 0; gidx < groups; ++gidx) {
            double inv_std = 0.0;
            normalized(x, gidx, buf, inv_std);
            for (std::size_t j = 0; j < len; ++j) {
                double v = buf[j];
                if (affine_) {
                    const std::size_t feature = over_rows_ ? gidx : j;
                    v = v * (*in[1])[feature] + (*in[2])[feature];
                }
                out[index(x, gidx, j)] = v;
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor& x = *in[0];
        const std::size_t groups = group_count(x), len = group_len(x);
        std::vector<double> xhat(len), dxhat(len);
        for (std::size_t gidx = 0; gidx < groups; ++gidx) {
            double inv_std = 0.0;
            normalized(x, gidx, xhat, inv_std);
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const std::size_t at = index(x, gidx, j);
                const std::size_t feature = over_rows_ ? gidx : j;
                const double gamma = affine_ ? (*in[1])[feature] : 1.0;
                dxhat[j] = g[at] * gamma;
                if (affine_) {
                    if (grads[1]) (*grads[1])[feature] += g[at] * xhat[j];
                    if (grads[2]) (*grads[2])[feature] += g[at];
                }
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xhat[j];
            }
            if (!grads[0]) continue;
            mean_d /= static_cast<double>(len);
            mean_dx /= static_cast<double>(len);
            for (std::size_t j = 0; j < len; ++j) {
                (*grads[0])[index(x, gidx, j)] += inv_std * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
    }

private:
    void check(std::span<const Tensor* const> in) const {
        const Tensor& x = *in[0];
        if (x.rank() < 1 || x.cols() == 0 || x.rows() == 0) throw ShapeError("cannot normalize empty tensor");
        if (affine_) {
            const std::size_t features = x.cols();
            if (in[1]->size() != features || in[2]->size() != features) {
                throw ShapeError("affine parameters " + shape_string(in[1]->shape()) + " do not match " +
                                 std::to_string(features) + " features");
            }
        }
    }
    std::size_t group_count(const Tensor& x) const { return over_rows_ ? x.cols() : x.rows(); }
    std::size_t group_len(const Tensor& x) const { return over_rows_ ? x.rows() : x.cols(); }
    std::size_t index(const Tensor& x, std::size_t gidx, std::size_t j) const {
        return over_rows_ ? j * x.cols() + gidx : gidx * x.cols() + j;
    }
    void normalized(const Tensor& x, std::size_t gidx, std::vector<double>& out, double& inv_std) const {
        const std::size_t len = out.size();
        double mu = 0.0;
        for (std::size_t j = 0; j < len; ++j) mu += x[index(x, gidx, j)];
        mu /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            const double d = x[index(x, gidx, j)] - mu;
            var += d * d;
        }
        var /= static_cast<double>(len);
        inv_std = 1.0 / std::sqrt(var + eps_);
        for (std::size_t j = 0; j < len; ++j) out[j] = (x[index(x, gidx, j)] - mu) * inv_std;
    }

    bool over_rows_;
    bool affine_;
    double eps_;
};

class Softmax final : public Op {
public:
    std::string name() const override { return "softmax"; }
    Tensor forward(std::span<const Tensor* const> in) const override {
        Tensor out = *in[0];
        if (out.cols() == 0) throw ShapeError("softmax over empty axis");
        for (std::size_t r = 0; r < out.rows(); ++r) {
            auto row = out.row(r);
            const double mx = *std::max_element(row.begin(), row.end());
            double s = 0.0;
            for (auto& v : row) {
                v = std::exp(v - mx);
                s += v;
            }
            for (auto& v : row) v /= s;
        }
        return out;
    }
    void backward(std::span<const Tensor* const>, const Tensor& y, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        const std::size_t c = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const double* yr = y.data() + r * c;
            const double* gr = g.data() + r * c;
            const double s = kernels::dot(yr, gr, c);
            double* dr = grads[0]->data() + r * c;
            for (std::size_t j = 0; j < c; ++j) dr[j] += yr[j] * (gr[j] - s);
        }
    }
};

class CrossEntropy final : public Op {
public:
    CrossEntropy(std::vector<std::int64_t> labels, std::vector<double> weights)
        : labels_(std::move(labels)), weights_(std::move(weights)) {}
    std::string name() const override { return "cross_entropy"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& z = *in[0];
        check(z);
        double total = 0.0;
        for (std::size_t r = 0; r < z.rows(); ++r) {
            if (labels_[r] < 0 || weights_[r] == 0.0) continue;
            const auto row = z.row(r);
            total += weights_[r] * (logsumexp(row) - row[static_cast<std::size_t>(labels_[r])]);
        }
        return Tensor::scalar(total);
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        const Tensor& z = *in[0];
        const std::size_t c = z.cols();
        for (std::size_t r = 0; r < z.rows(); ++r) {
            if (labels_[r] < 0 || weights_[r] == 0.0) continue;
            const auto row = z.row(r);
            const double lse = logsumexp(row);
            const double w = g[0] * weights_[r];
            double* dr = grads[0]->data() + r * c;
            for (std::size_t j = 0; j < c; ++j) dr[j] += w * std::exp(row[j] - lse);
            dr[static_cast<std::size_t>(labels_[r])] -= w;
        }
    }

private:
    void check(const Tensor& z) const {
        if (z.rank() < 1 || z.cols() == 0) throw ShapeError("cross entropy needs non-empty logits");
        if (labels_.size() != z.rows() || weights_.size() != z.rows()) {
            throw ShapeError("cross entropy: " + std::to_string(labels_.size()) + " labels for " +
                             std::to_string(z.rows()) + " rows");
        }
        for (auto l : labels_) {
            if (l >= static_cast<std::int64_t>(z.cols())) {
                throw ShapeError("label " + std::to_string(l) + " outside " + std::to_string(z.cols()) + " classes");
            }
        }
    }
    static double logsumexp(std::span<const double> row) {
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        return mx + std::log(s);
    }

    std::vector<std::int64_t> labels_;
    std::vector<double> weights_;
};

Segments resolve_segments(const Segments& segments, std::size_t rows) {
    if (segments.empty()) return {0, rows};
    if (segments.front() != 0 || segments.back() != rows || !std::is_sorted(segments.begin(), segments.end())) {
        throw ShapeError("segment offsets do not partition " + std::to_string(rows) + " rows");
    }
    return segments;
}

class Attention final : public Op {
public:
    explicit Attention(AttentionSpec spec) : spec_(std::move(spec)) {}
    std::string name() const override { return spec_.causal ? "causal_attention" : "attention"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor &q = *in[0], &k = *in[1], &v = *in[2];
        check(q, k, v);
        const std::size_t d = q.cols(), dh = d / spec_.heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor out(q.shape());
        const Segments seg = resolve_segments(spec_.segments, q.rows());
        std::vector<double> p;
        for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
            const std::size_t begin = seg[s], end = seg[s + 1];
            for (std::size_t h = 0; h < spec_.heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = begin; i < end; ++i) {
                    const std::size_t last = spec_.causal ? i + 1 : end;
                    probs(q, k, i, begin, last, off, dh, scale, p);
                    double* o = out.data() + i * d + off;
                    for (std::size_t j = begin; j < last; ++j) {
                        const double pj = p[j - begin];
                        const double* vj = v.data() + j * d + off;
                        for (std::size_t c = 0; c < dh; ++c) o[c] += pj * vj[c];
                    }
                }
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor &q = *in[0], &k = *in[1], &v = *in[2];
        const std::size_t d = q.cols(), dh = d / spec_.heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const Segments seg = resolve_segments(spec_.segments, q.rows());
        std::vector<double> p, dp;
        for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
            const std::size_t begin = seg[s], end = seg[s + 1];
            for (std::size_t h = 0; h < spec_.heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = begin; i < end; ++i) {
                    const std::size_t last = spec_.causal ? i + 1 : end;
                    probs(q, k, i, begin, last, off, dh, scale, p);
                    const double* gi = g.data() + i * d + off;
                    dp.assign(last - begin, 0.0);
                    double acc = 0.0;
                    for (std::size_t j = begin; j < last; ++j) {
                        dp[j - begin] = kernels::dot(gi, v.data() + j * d + off, dh);
                        acc += p[j - begin] * dp[j - begin];
                    }
                    const double* qi = q.data() + i * d + off;
                    for (std::size_t j = begin; j < last; ++j) {
                        const double pj = p[j - begin];
                        const double ds = pj * (dp[j - begin] - acc) * scale;
                        if (grads[0]) {
                            double* dq = grads[0]->data() + i * d + off;
                            const double* kj = k.data() + j * d + off;
                            for (std::size_t c = 0; c < dh; ++c) dq[c] += ds * kj[c];
                        }
                        if (grads[1]) {
                            double* dk = grads[1]->data() + j * d + off;
                            for (std::size_t c = 0; c < dh; ++c) dk[c] += ds * qi[c];
                        }
                        if (grads[2]) {
                            double* dv = grads[2]->data() + j * d + off;
                            for (std::size_t c = 0; c < dh; ++c) dv[c] += pj * gi[c];
                        }
                    }
                }
            }
        }
    }

private:
    void check(const Tensor& q, const Tensor& k, const Tensor& v) const {
        if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
            throw ShapeError("attention expects equal [T, D] inputs, got " + shape_string(q.shape()) + ", " +
                             shape_string(k.shape()) + ", " + shape_string(v.shape()));
        }
        if (spec_.heads == 0 || q.cols() % spec_.heads != 0) {
            throw ShapeError("width " + std::to_string(q.cols()) + " not divisible by " +
                             std::to_string(spec_.heads) + " heads");
        }
    }
    static void probs(const Tensor& q, const Tensor& k, std::size_t i, std::size_t begin, std::size_t last,
                      std::size_t off, std::size_t dh, double scale, std::vector<double>& p) {
        const std::size_t d = q.cols();
        p.resize(last - begin);
        const double* qi = q.data() + i * d + off;
        double mx = -INFINITY;
        for (std::size_t j = begin; j < last; ++j) {
            p[j - begin] = scale * kernels::dot(qi, k.data() + j * d + off, dh);
            mx = std::max(mx, p[j - begin]);
        }
        double s = 0.0;
        for (auto& x : p) {
            x = std::exp(x - mx);
            s += x;
        }
        for (auto& x : p) x /= s;
    }

    AttentionSpec spec_;
};

} // namespace

Var layer_norm(Var x, double eps) { return x.graph().apply(std::make_shared<Normalize>(false, false, eps), {x}); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    return x.graph().apply(std::make_shared<Normalize>(false, true, eps), {x, gamma, beta});
}

Var batch_norm(Var x, Var gamma, Var beta, double eps) {
    return x.graph().apply(std::make_shared<Normalize>(true, true, eps), {x, gamma, beta});
}

Var softmax(Var x) { return x.graph().apply(std::make_shared<Softmax>(), {x}); }

Var cross_entropy(Var logits, std::vector<std::int64_t> labels, std::vector<double> weights) {
    return logits.graph().apply(std::make_shared<CrossEntropy>(std::move(labels), std::move(weights)), {logits});
}

Var attention(Var q, Var k, Var v, AttentionSpec spec) {
    return q.graph().apply(std::make_shared<Attention>(std::move(spec)), {q, k, v});
}

} // namespace lgpt
