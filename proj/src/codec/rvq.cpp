#include "lgpt/codec/codec.hpp"

#include "lgpt/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace lgpt::codec {

std::size_t CodecConfig::hop() const {
    return std::accumulate(strides.begin(), strides.end(), std::size_t{1}, std::multiplies<>());
}

double CodecConfig::token_rate() const { return static_cast<double>(sample_rate) / static_cast<double>(hop()); }

void CodecConfig::validate() const {
    if (strides.empty()) throw ConfigError("codec.strides must not be empty");
    for (auto s : strides) {
        if (s < 1) throw ConfigError("codec.strides entries must be >= 1");
    }
    if (channels.size() != strides.size() + 1) {
        throw ConfigError("codec.channels needs one entry more than codec.strides");
    }
    for (auto c : channels) {
        if (c < 1) throw ConfigError("codec.channels entries must be >= 1");
    }
    if (sample_rate <= 0 || static_cast<std::size_t>(sample_rate) % hop() != 0) {
        throw ConfigError("codec sample rate must be a multiple of the stride product");
    }
    if (latent_dim < 1) throw ConfigError("codec.latent_dim must be >= 1");
    if (num_quantizers < 1) throw ConfigError("codec.num_quantizers must be >= 1");
    if (codebook_size < 2 || codebook_size > 65536) throw ConfigError("codec.codebook_size must be in [2, 65536]");
    if (ema_decay < 0.0 || ema_decay > 1.0) throw ConfigError("codec.ema_decay must be in [0, 1]");
    if (commitment < 0.0) throw ConfigError("codec.commitment must be >= 0");
}

std::size_t frame_count(std::size_t samples, const CodecConfig& config) {
    const std::size_t hop = config.hop();
    return (samples + hop - 1) / hop;
}

CodeFrameSeq::CodeFrameSeq(std::size_t frames, std::size_t groups, std::size_t active)
    : frames(frames), groups(groups), active_groups(active), indices(frames * groups, 0) {
    if (active < 1 || active > groups) throw RangeError("active groups must be in [1, groups]");
}

std::vector<std::size_t> CodeFrameSeq::column(std::size_t g) const {
    if (g >= active_groups) throw RangeError("code group " + std::to_string(g) + " is not populated");
    std::vector<std::size_t> out(frames);
    for (std::size_t t = 0; t < frames; ++t) out[t] = at(t, g);
    return out;
}

CodeFrameSeq CodeFrameSeq::truncated(std::size_t n) const {
    if (n < 1 || n > active_groups) throw RangeError("cannot truncate codes to " + std::to_string(n) + " groups");
    CodeFrameSeq out(frames, n, n);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t g = 0; g < n; ++g) out.at(t, g) = at(t, g);
    }
    return out;
}

Codebooks::Codebooks(std::size_t stages, std::size_t size, std::size_t dim)
    : stages_(stages), size_(size), dim_(dim), values_(stages * size * dim, 0.0) {}

void Codebooks::set(std::size_t stage, std::size_t k, const double* values) {
    if (k == 0) throw RangeError("codebook entry 0 is fixed at zero");
    std::copy(values, values + dim_, entry(stage, k));
}

Tensor Codebooks::tensor() const { return Tensor({stages_, size_, dim_}, values_); }

Codebooks Codebooks::from_tensor(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("codebooks must be [Q, K, D], got " + shape_string(t.shape()));
    Codebooks books(t.dim(0), t.dim(1), t.dim(2));
    books.values_ = t.storage();
    for (std::size_t q = 0; q < books.stages_; ++q) std::fill_n(books.entry(q, 0), books.dim_, 0.0);
    return books;
}

double squared_distance(const double* a, const double* b, std::size_t dim, double bound) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
        // Partial sums only grow, so anything past the bound cannot win.
        if ((i & 7) == 7 && acc > bound) return acc;
    }
    return acc;
}

std::size_t nearest_code(const Codebooks& books, std::size_t stage, const double* x) {
    std::size_t best = 0;
    double best_d = squared_distance(x, books.entry(stage, 0), books.dim(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 1; k < books.size(); ++k) {
        const double d = squared_distance(x, books.entry(stage, k), books.dim(), best_d);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

Quantized rvq_quantize(const Tensor& latents, std::size_t n_active, const Codebooks& books) {
    if (latents.rank() != 2 || latents.cols() != books.dim()) {
        throw ShapeError("latents " + shape_string(latents.shape()) + " do not match codebook width " +
                         std::to_string(books.dim()));
    }
    if (n_active < 1 || n_active > books.stages()) {
        throw RangeError("n_active " + std::to_string(n_active) + " outside [1, " + std::to_string(books.stages()) +
                         "]");
    }
    const std::size_t T = latents.rows(), D = books.dim();
    Quantized q;
    q.codes = CodeFrameSeq(T, books.stages(), n_active);
    q.sum_embedding = Tensor({T, D});
    q.residual = latents;
    q.stage_inputs.reserve(n_active);
    for (std::size_t g = 0; g < n_active; ++g) {
        q.stage_inputs.push_back(q.residual);
        for (std::size_t t = 0; t < T; ++t) {
            double* r = q.residual.data() + t * D;
            const std::size_t k = nearest_code(books, g, r);
            q.codes.at(t, g) = static_cast<std::uint16_t>(k);
            const double* e = books.entry(g, k);
            double* s = q.sum_embedding.data() + t * D;
            for (std::size_t i = 0; i < D; ++i) {
                r[i] -= e[i];
                s[i] += e[i];
            }
        }
    }
    return q;
}

Tensor rvq_dequantize(const CodeFrameSeq& codes, std::size_t n, const Codebooks& books) {
    if (n < 1 || n > codes.active_groups) {
        throw RangeError("cannot dequantize " + std::to_string(n) + " groups from codes with " +
                         std::to_string(codes.active_groups) + " populated");
    }
    if (n > books.stages()) throw RangeError("codes use more groups than the codebooks provide");
    const std::size_t D = books.dim();
    Tensor out({codes.frames, D});
    for (std::size_t t = 0; t < codes.frames; ++t) {
        double* s = out.data() + t * D;
        for (std::size_t g = 0; g < n; ++g) {
            const std::size_t k = codes.at(t, g);
            if (k >= books.size()) {
                throw RangeError("code " + std::to_string(k) + " at frame " + std::to_string(t) + " group " +
                                 std::to_string(g) + " outside codebook of size " + std::to_string(books.size()));
            }
            const double* e = books.entry(g, k);
            for (std::size_t i = 0; i < D; ++i) s[i] += e[i];
        }
    }
    return out;
}

std::vector<std::size_t> dropout_choices(std::size_t num_quantizers) {
    std::vector<std::size_t> out;
    for (std::size_t n = 1; n <= num_quantizers; ++n) out.push_back(n);
    return out;
}

} // namespace lgpt::codec
