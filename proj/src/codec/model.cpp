#include "lgpt/codec/codec.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/init.hpp"
#include "lgpt/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

namespace lgpt::codec {

namespace {

constexpr std::size_t kEdgeKernel = 7;
constexpr std::size_t kLatentKernel = 3;

std::string block_name(const char* side, std::size_t i) { return std::string(side) + ".b" + std::to_string(i); }

Var conv_same(Graph& g, Var x, const std::string& name, std::size_t k) {
    return conv1d(x, g.parameter(name + ".w"), g.parameter(name + ".b"), {1, k / 2, k - 1 - k / 2});
}

// Pointwise residual mixing in place of a recurrent layer.
Var mix(Graph& g, Var h, const std::string& name) {
    Var a = elu(add(matmul(h, g.parameter(name + ".mix1.w")), g.parameter(name + ".mix1.b")));
    return add(h, add(matmul(a, g.parameter(name + ".mix2.w")), g.parameter(name + ".mix2.b")));
}

} // namespace

std::vector<double> pad_to_hop(std::span<const double> samples, const CodecConfig& config) {
    std::vector<double> out(frame_count(samples.size(), config) * config.hop(), 0.0);
    std::copy(samples.begin(), samples.end(), out.begin());
    return out;
}

CodecModel::CodecModel(CodecConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    init_params(seed);
}

void CodecModel::init_params(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xc0dec));
    const auto& ch = config_.channels;
    const std::size_t D = config_.latent_dim;
    auto conv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
        params_.add(name + ".w", init::glorot({k, cin, cout}, k * cin, k * cout, rng));
        params_.add(name + ".b", init::zeros({cout}));
    };
    auto tconv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
        params_.add(name + ".w", init::glorot({cin, k, cout}, k * cin, k * cout, rng));
        params_.add(name + ".b", init::zeros({cout}));
    };
    auto mixer = [&](const std::string& name, std::size_t c) {
        params_.add(name + ".mix1.w", init::glorot({c, c}, c, c, rng));
        params_.add(name + ".mix1.b", init::zeros({c}));
        params_.add(name + ".mix2.w", init::glorot({c, c}, c, c, rng));
        params_.add(name + ".mix2.b", init::zeros({c}));
    };

    conv("enc.in", kEdgeKernel, 1, ch[0]);
    for (std::size_t i = 0; i < config_.strides.size(); ++i) {
        conv(block_name("enc", i) + ".conv", 2 * config_.strides[i], ch[i], ch[i + 1]);
        mixer(block_name("enc", i), ch[i + 1]);
    }
    conv("enc.out", kLatentKernel, ch.back(), D);

    conv("dec.in", kLatentKernel, D, ch.back());
    for (std::size_t i = config_.strides.size(); i-- > 0;) {
        tconv(block_name("dec", i) + ".conv", 2 * config_.strides[i], ch[i + 1], ch[i]);
        mixer(block_name("dec", i), ch[i]);
    }
    conv("dec.out", kEdgeKernel, ch[0], 1);

    const std::size_t Q = config_.num_quantizers, K = config_.codebook_size;
    books_ = Codebooks(Q, K, D);
    const double spread = 1.0 / std::sqrt(static_cast<double>(D));
    for (std::size_t q = 0; q < Q; ++q) {
        std::vector<double> e(D);
        for (std::size_t k = 1; k < K; ++k) {
            for (auto& v : e) v = rng.normal(0.0, spread);
            books_.set(q, k, e.data());
        }
    }
    ema_counts = Tensor({Q, K}, 1.0);
    ema_sums = books_.tensor();
    idle_steps = Tensor({Q, K});
}

Var CodecModel::encode(Graph& g, Var x) const {
    Var h = elu(conv_same(g, x, "enc.in", kEdgeKernel));
    for (std::size_t i = 0; i < config_.strides.size(); ++i) {
        const std::size_t s = config_.strides[i];
        const std::string name = block_name("enc", i);
        h = conv1d(h, g.parameter(name + ".conv.w"), g.parameter(name + ".conv.b"), {s, s / 2, s - s / 2});
        h = mix(g, elu(h), name);
    }
    return conv_same(g, h, "enc.out", kLatentKernel);
}

Var CodecModel::decode(Graph& g, Var embedding) const {
    Var h = elu(conv_same(g, embedding, "dec.in", kLatentKernel));
    for (std::size_t i = config_.strides.size(); i-- > 0;) {
        const std::size_t s = config_.strides[i];
        const std::string name = block_name("dec", i);
        h = conv_transpose1d(h, g.parameter(name + ".conv.w"), g.parameter(name + ".conv.b"), {s, s / 2, s - s / 2});
        h = mix(g, elu(h), name);
    }
    return conv_same(g, h, "dec.out", kEdgeKernel);
}

Tensor CodecModel::encode_latents(const dsp::Waveform& w) const {
    if (w.empty()) throw Error("cannot encode an empty waveform");
    if (w.sample_rate != config_.sample_rate) {
        throw FormatError("waveform sample rate " + std::to_string(w.sample_rate) + " does not match codec rate " +
                          std::to_string(config_.sample_rate));
    }
    std::vector<double> padded = pad_to_hop(w.samples, config_);
    const std::size_t n = padded.size();
    ParameterStore& store = const_cast<ParameterStore&>(params_);
    Graph g(&store);
    Var latents = encode(g, g.input("x", Tensor({1, n, 1}, std::move(padded))));
    return latents.value().reshaped({n / config_.hop(), config_.latent_dim});
}

dsp::Waveform CodecModel::decode_waveform(const Tensor& sum_embedding) const {
    if (sum_embedding.rank() != 2 || sum_embedding.cols() != config_.latent_dim) {
        throw ShapeError("embedding " + shape_string(sum_embedding.shape()) + " does not match latent width " +
                         std::to_string(config_.latent_dim));
    }
    const std::size_t T = sum_embedding.rows();
    if (T == 0) throw ShapeError("cannot decode zero frames");
    ParameterStore& store = const_cast<ParameterStore&>(params_);
    Graph g(&store);
    Var out = decode(g, g.input("e", sum_embedding.reshaped({1, T, config_.latent_dim})));
    dsp::Waveform w;
    w.sample_rate = config_.sample_rate;
    w.samples = out.value().storage();
    for (auto& v : w.samples) v = std::clamp(v, -1.0, 1.0);
    return w;
}

CodeFrameSeq CodecModel::encode_codes(const dsp::Waveform& w, std::size_t n_active) const {
    return rvq_quantize(encode_latents(w), n_active, books_).codes;
}

dsp::Waveform CodecModel::decode_codes(const CodeFrameSeq& codes, std::size_t n) const {
    return decode_waveform(rvq_dequantize(codes, n, books_));
}

dsp::Waveform CodecModel::round_trip(const dsp::Waveform& w, std::size_t n) const {
    return decode_waveform(rvq_quantize(encode_latents(w), n, books_).sum_embedding);
}

TensorMap CodecModel::state() const {
    TensorMap out = params_.tensors();
    out["rvq.codebooks"] = books_.tensor();
    out["rvq.ema_counts"] = ema_counts;
    out["rvq.ema_sums"] = ema_sums;
    out["rvq.idle_steps"] = idle_steps;
    return out;
}

void CodecModel::load_state(const TensorMap& tensors) {
    for (auto& [name, value] : params_.tensors()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("codec checkpoint is missing '" + name + "'");
        if (it->second.shape() != value.shape()) {
            throw FormatError("codec checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                              ", config expects " + shape_string(value.shape()));
        }
        value = it->second;
    }
    auto take = [&](const std::string& name, const Tensor& like) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("codec checkpoint is missing '" + name + "'");
        if (it->second.shape() != like.shape()) {
            throw FormatError("codec checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                              ", config expects " + shape_string(like.shape()));
        }
        return it->second;
    };
    books_ = Codebooks::from_tensor(take("rvq.codebooks", books_.tensor()));
    ema_counts = take("rvq.ema_counts", ema_counts);
    ema_sums = take("rvq.ema_sums", ema_sums);
    idle_steps = take("rvq.idle_steps", idle_steps);
}

} // namespace lgpt::codec
