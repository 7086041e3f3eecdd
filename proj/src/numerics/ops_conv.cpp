#include "lgpt/numerics/ops.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace lgpt {
namespace {

struct SeqDims {
    std::size_t batch, time, channels;
};

SeqDims seq_dims(const Tensor& x, const char* what) {
    if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
    if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
    throw ShapeError(std::string(what) + " expects [T, C] or [B, T, C], got " + shape_string(x.shape()));
}

Shape seq_shape(const Tensor& like, std::size_t batch, std::size_t time, std::size_t channels) {
    if (like.rank() == 2) return {time, channels};
    return {batch, time, channels};
}

class Conv1d final : public Op {
public:
    explicit Conv1d(Conv1dSpec spec) : spec_(spec) {}
    std::string name() const override { return "conv1d"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor &x = *in[0], &w = *in[1], &b = *in[2];
        const auto [batch, time, cin] = seq_dims(x, "conv1d");
        const std::size_t k = kernel(w, cin, b);
        const std::size_t cout = w.dim(2);
        const std::size_t tout = out_len(time, k);
        Tensor out(seq_shape(x, batch, tout, cout));
        std::vector<double> col(tout * k * cin);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            im2col(x.data() + bi * time * cin, time, cin, k, tout, col);
            double* o = out.data() + bi * tout * cout;
            kernels::gemm(col.data(), w.data(), o, tout, k * cin, cout);
            for (std::size_t t = 0; t < tout; ++t) {
                for (std::size_t c = 0; c < cout; ++c) o[t * cout + c] += b[c];
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor &x = *in[0], &w = *in[1];
        const auto [batch, time, cin] = seq_dims(x, "conv1d");
        const std::size_t k = w.dim(0), cout = w.dim(2);
        const std::size_t tout = out.rank() == 2 ? out.dim(0) : out.dim(1);
        std::vector<double> col(tout * k * cin), dcol(tout * k * cin);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* gb = g.data() + bi * tout * cout;
            if (grads[1]) {
                im2col(x.data() + bi * time * cin, time, cin, k, tout, col);
                kernels::gemm_at(col.data(), gb, grads[1]->data(), tout, k * cin, cout, true);
            }
            if (grads[2]) {
                for (std::size_t t = 0; t < tout; ++t) {
                    for (std::size_t c = 0; c < cout; ++c) (*grads[2])[c] += gb[t * cout + c];
                }
            }
            if (grads[0]) {
                kernels::gemm_bt(gb, w.data(), dcol.data(), tout, cout, k * cin);
                double* dx = grads[0]->data() + bi * time * cin;
                for (std::size_t t = 0; t < tout; ++t) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * spec_.stride + j) -
                                                   static_cast<std::ptrdiff_t>(spec_.pad_left);
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(time)) continue;
                        const double* d = dcol.data() + (t * k + j) * cin;
                        double* dst = dx + static_cast<std::size_t>(src) * cin;
                        for (std::size_t c = 0; c < cin; ++c) dst[c] += d[c];
                    }
                }
            }
        }
    }

private:
    std::size_t kernel(const Tensor& w, std::size_t cin, const Tensor& b) const {
        if (w.rank() != 3 || w.dim(1) != cin || b.size() != w.dim(2)) {
            throw ShapeError("conv1d weight " + shape_string(w.shape()) + " / bias " + shape_string(b.shape()) +
                             " incompatible with " + std::to_string(cin) + " input channels");
        }
        if (spec_.stride == 0) throw ShapeError("conv1d stride must be positive");
        return w.dim(0);
    }
    std::size_t out_len(std::size_t time, std::size_t k) const {
        const std::size_t padded = time + spec_.pad_left + spec_.pad_right;
        if (padded < k) throw ShapeError("conv1d input of length " + std::to_string(time) + " shorter than kernel");
        return (padded - k) / spec_.stride + 1;
    }
    void im2col(const double* x, std::size_t time, std::size_t cin, std::size_t k, std::size_t tout,
                std::vector<double>& col) const {
        for (std::size_t t = 0; t < tout; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                double* dst = col.data() + (t * k + j) * cin;
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * spec_.stride + j) -
                                           static_cast<std::ptrdiff_t>(spec_.pad_left);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(time)) {
                    std::fill_n(dst, cin, 0.0);
                } else {
                    std::copy_n(x + static_cast<std::size_t>(src) * cin, cin, dst);
                }
            }
        }
    }

    Conv1dSpec spec_;
};

class ConvTranspose1d final : public Op {
public:
    explicit ConvTranspose1d(ConvTranspose1dSpec spec) : spec_(spec) {}
    std::string name() const override { return "conv_transpose1d"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor &x = *in[0], &w = *in[1], &b = *in[2];
        const auto [batch, time, cin] = seq_dims(x, "conv_transpose1d");
        if (w.rank() != 3 || w.dim(0) != cin || b.size() != w.dim(2)) {
            throw ShapeError("conv_transpose1d weight " + shape_string(w.shape()) + " incompatible with " +
                             std::to_string(cin) + " input channels");
        }
        if (spec_.stride == 0 || time == 0) throw ShapeError("conv_transpose1d needs positive stride and length");
        const std::size_t k = w.dim(1), cout = w.dim(2);
        const std::size_t full = (time - 1) * spec_.stride + k;
        if (full < spec_.crop_left + spec_.crop_right) throw ShapeError("conv_transpose1d crop exceeds output");
        const std::size_t tout = full - spec_.crop_left - spec_.crop_right;
        Tensor out(seq_shape(x, batch, tout, cout));
        std::vector<double> y(time * k * cout);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            kernels::gemm(x.data() + bi * time * cin, w.data(), y.data(), time, cin, k * cout);
            double* o = out.data() + bi * tout * cout;
            for (std::size_t t = 0; t < tout; ++t) {
                for (std::size_t c = 0; c < cout; ++c) o[t * cout + c] = b[c];
            }
            for (std::size_t t = 0; t < time; ++t) {
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t * spec_.stride + j) -
                                               static_cast<std::ptrdiff_t>(spec_.crop_left);
                    if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(tout)) continue;
                    const double* src = y.data() + (t * k + j) * cout;
                    double* d = o + static_cast<std::size_t>(dst) * cout;
                    for (std::size_t c = 0; c < cout; ++c) d[c] += src[c];
                }
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor &x = *in[0], &w = *in[1];
        const auto [batch, time, cin] = seq_dims(x, "conv_transpose1d");
        const std::size_t k = w.dim(1), cout = w.dim(2);
        const std::size_t tout = out.rank() == 2 ? out.dim(0) : out.dim(1);
        std::vector<double> dy(time * k * cout);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* gb = g.data() + bi * tout * cout;
            if (grads[2]) {
                for (std::size_t t = 0; t < tout; ++t) {
                    for (std::size_t c = 0; c < cout; ++c) (*grads[2])[c] += gb[t * cout + c];
                }
            }
            if (!grads[0] && !grads[1]) continue;
            for (std::size_t t = 0; t < time; ++t) {
                for (std::size_t j = 0; j < k; ++j) {
                    double* d = dy.data() + (t * k + j) * cout;
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * spec_.stride + j) -
                                               static_cast<std::ptrdiff_t>(spec_.crop_left);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(tout)) {
                        std::fill_n(d, cout, 0.0);
                    } else {
                        std::copy_n(gb + static_cast<std::size_t>(src) * cout, cout, d);
                    }
                }
            }
            if (grads[0]) {
                kernels::gemm_bt(dy.data(), w.data(), grads[0]->data() + bi * time * cin, time, k * cout, cin, true);
            }
            if (grads[1]) {
                kernels::gemm_at(x.data() + bi * time * cin, dy.data(), grads[1]->data(), time, cin, k * cout, true);
            }
        }
    }

private:
    ConvTranspose1dSpec spec_;
};

class DepthwiseConv1d final : public Op {
public:
    explicit DepthwiseConv1d(Segments segments) : segments_(std::move(segments)) {}
    std::string name() const override { return "depthwise_conv1d"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor &x = *in[0], &w = *in[1], &b = *in[2];
        if (x.rank() != 2 || w.rank() != 2 || w.dim(1) != x.dim(1) || b.size() != x.dim(1)) {
            throw ShapeError("depthwise_conv1d: input " + shape_string(x.shape()) + ", weight " +
                             shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
        }
        Tensor out(x.shape());
        visit(x, w, [&](std::size_t t, std::size_t src, std::size_t j, std::size_t c) {
            out.at(t, c) += w.at(j, c) * x.at(src, c);
        });
        for (std::size_t t = 0; t < x.dim(0); ++t) {
            for (std::size_t c = 0; c < x.dim(1); ++c) out.at(t, c) += b[c];
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        const Tensor &x = *in[0], &w = *in[1];
        visit(x, w, [&](std::size_t t, std::size_t src, std::size_t j, std::size_t c) {
            if (grads[0]) grads[0]->at(src, c) += w.at(j, c) * g.at(t, c);
            if (grads[1]) grads[1]->at(j, c) += x.at(src, c) * g.at(t, c);
        });
        if (grads[2]) {
            for (std::size_t t = 0; t < x.dim(0); ++t) {
                for (std::size_t c = 0; c < x.dim(1); ++c) (*grads[2])[c] += g.at(t, c);
            }
        }
    }

private:
    template <class F>
    void visit(const Tensor& x, const Tensor& w, F&& f) const {
        const std::size_t rows = x.dim(0), channels = x.dim(1), k = w.dim(0);
        const std::size_t pad = (k - 1) / 2;
        Segments seg = segments_.empty() ? Segments{0, rows} : segments_;
        if (seg.front() != 0 || seg.back() != rows) throw ShapeError("segments do not cover the input");
        for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
            const std::ptrdiff_t begin = static_cast<std::ptrdiff_t>(seg[s]);
            const std::ptrdiff_t end = static_cast<std::ptrdiff_t>(seg[s + 1]);
            for (std::ptrdiff_t t = begin; t < end; ++t) {
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(pad);
                    if (src < begin || src >= end) continue;
                    for (std::size_t c = 0; c < channels; ++c) {
                        f(static_cast<std::size_t>(t), static_cast<std::size_t>(src), j, c);
                    }
                }
            }
        }
    }

    Segments segments_;
};

class StftMagnitude final : public Op {
public:
    StftMagnitude(std::size_t win, std::size_t hop, bool hann) : win_(win), hop_(hop), fft_(win), window_(win, 1.0) {
        if (hop == 0 || hop > win) throw ShapeError("STFT hop must be in (0, win]");
        if (hann) {
            for (std::size_t n = 0; n < win; ++n) {
                window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                                  static_cast<double>(win));
            }
        }
    }
    std::string name() const override { return "stft_magnitude"; }

    Tensor forward(std::span<const Tensor* const> in) const override {
        const Tensor& x = *in[0];
        const auto [batch, len] = dims(x);
        const std::size_t frames = frame_count(len), bins = win_ / 2 + 1;
        Shape shape = x.rank() == 1 ? Shape{frames, bins} : Shape{batch, frames, bins};
        Tensor out(shape);
        std::vector<std::complex<double>> buf(win_);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < frames; ++f) {
                spectrum(x.data() + b * len, len, f, buf);
                double* o = out.data() + (b * frames + f) * bins;
                for (std::size_t k = 0; k < bins; ++k) o[k] = std::abs(buf[k]);
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> grads) const override {
        if (!grads[0]) return;
        const Tensor& x = *in[0];
        const auto [batch, len] = dims(x);
        const std::size_t frames = frame_count(len), bins = win_ / 2 + 1;
        std::vector<std::complex<double>> buf(win_), acc(win_);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < frames; ++f) {
                spectrum(x.data() + b * len, len, f, buf);
                const double* gf = g.data() + (b * frames + f) * bins;
                std::fill(acc.begin(), acc.end(), std::complex<double>{});
                for (std::size_t k = 0; k < bins; ++k) {
                    const double mag = std::abs(buf[k]);
                    if (mag > 0.0) acc[k] = gf[k] * std::conj(buf[k]) / mag;
                }
                // d|X_k|/da_n = Re(conj(X_k)/|X_k| * e^{-2 pi i k n / N}), summed over the one-sided bins.
                fft_.forward(acc);
                double* dx = grads[0]->data() + b * len;
                for (std::size_t n = 0; n < win_; ++n) {
                    const std::size_t at = f * hop_ + n;
                    if (at >= len) break;
                    dx[at] += window_[n] * acc[n].real();
                }
            }
        }
    }

private:
    std::pair<std::size_t, std::size_t> dims(const Tensor& x) const {
        if (x.rank() == 1) return {1, x.dim(0)};
        if (x.rank() == 2) return {x.dim(0), x.dim(1)};
        throw ShapeError("stft expects [T] or [B, T], got " + shape_string(x.shape()));
    }
    std::size_t frame_count(std::size_t len) const {
        if (len == 0) throw ShapeError("stft of empty signal");
        return (len + hop_ - 1) / hop_;
    }
    void spectrum(const double* x, std::size_t len, std::size_t frame, std::vector<std::complex<double>>& buf) const {
        for (std::size_t n = 0; n < win_; ++n) {
            const std::size_t at = frame * hop_ + n;
            buf[n] = at < len ? window_[n] * x[at] : 0.0;
        }
        fft_.forward(buf);
    }

    std::size_t win_, hop_;
    kernels::Fft fft_;
    std::vector<double> window_;
};

} // namespace

Var conv1d(Var x, Var weight, Var bias, Conv1dSpec spec) {
    return x.graph().apply(std::make_shared<Conv1d>(spec), {x, weight, bias});
}

Var conv_transpose1d(Var x, Var weight, Var bias, ConvTranspose1dSpec spec) {
    return x.graph().apply(std::make_shared<ConvTranspose1d>(spec), {x, weight, bias});
}

Var depthwise_conv1d(Var x, Var weight, Var bias, Segments segments) {
    return x.graph().apply(std::make_shared<DepthwiseConv1d>(std::move(segments)), {x, weight, bias});
}

Var stft_magnitude(Var x, std::size_t win, std::size_t hop, bool hann) {
    return x.graph().apply(std::make_shared<StftMagnitude>(win, hop, hann), {x});
}

} // namespace lgpt
