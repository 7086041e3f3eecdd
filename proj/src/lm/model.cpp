#include "lgpt/lm/model.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/init.hpp"

#include <algorithm>
#include <cmath>

namespace lgpt::lm {

void LMConfig::validate() const {
    if (layers < 1) throw ConfigError("lm.layers must be >= 1");
    if (width < 1 || heads < 1 || width % heads != 0) throw ConfigError("lm.width must be divisible by lm.heads");
    if (ff_dim < 1) throw ConfigError("lm.ff_dim must be >= 1");
    if (max_length < 4) throw ConfigError("lm.max_length must be >= 4");
    if (max_new_tokens < 1) throw ConfigError("lm.max_new_tokens must be >= 1");
    if (sampling == Sampling::top_k && top_k < 1) throw ConfigError("lm.top_k must be >= 1");
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t dim) {
    Tensor out({rows, dim});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(r) * rate;
            out.at(r, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return out;
}

LanguageModel::LanguageModel(UnifiedVocab vocab, LMConfig config, AudioEncoderConfig encoder, std::uint64_t seed)
    : vocab_(vocab), config_(config), encoder_(encoder) {
    config_.validate();
    if (encoder_.blocks < 1 || encoder_.heads < 1 || config_.width % encoder_.heads != 0) {
        throw ConfigError("audio encoder heads must divide lm.width");
    }
    if (encoder_.input_dim < 1 || encoder_.ff_dim < 1 || encoder_.conv_kernel < 1) {
        throw ConfigError("audio encoder dimensions must be >= 1");
    }
    Rng rng(mix_seed(seed, 0x1a9));
    const std::size_t D = config_.width;
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
        params_.add(name + ".w", init::glorot({in, out}, in, out, rng));
        params_.add(name + ".b", init::zeros({out}));
    };
    auto norm_params = [&](const std::string& name) {
        params_.add(name + ".g", init::ones({D}));
        params_.add(name + ".b", init::zeros({D}));
    };
    auto attention_params = [&](const std::string& name) {
        for (const char* p : {".q", ".k", ".v", ".o"}) linear(name + p, D, D);
    };

    params_.add("lm.embed", init::normal({vocab_.size(), D}, 0.02, rng));
    params_.add("lm.pos", init::normal({config_.max_length, D}, 0.02, rng));
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string name = "lm.l" + std::to_string(l);
        norm_params(name + ".ln1");
        attention_params(name + ".attn");
        norm_params(name + ".ln2");
        linear(name + ".ff1", D, config_.ff_dim);
        linear(name + ".ff2", config_.ff_dim, D);
    }
    norm_params("lm.ln_f");

    linear("enc.in", encoder_.input_dim, D);
    for (std::size_t b = 0; b < encoder_.blocks; ++b) {
        const std::string name = "enc.b" + std::to_string(b);
        for (const char* ff : {".ffa", ".ffb"}) {
            norm_params(name + ff + ".n");
            linear(name + ff + "1", D, encoder_.ff_dim);
            linear(name + ff + "2", encoder_.ff_dim, D);
        }
        norm_params(name + ".attn.n");
        attention_params(name + ".attn");
        norm_params(name + ".conv.n");
        linear(name + ".conv.pw1", D, D);
        params_.add(name + ".conv.dw.w",
                    init::glorot({encoder_.conv_kernel, D}, encoder_.conv_kernel, encoder_.conv_kernel, rng));
        params_.add(name + ".conv.dw.b", init::zeros({D}));
        linear(name + ".conv.pw2", D, D);
        norm_params(name + ".out");
    }
}

namespace {

Var linear(Graph& g, Var x, const std::string& name) {
    return add(matmul(x, g.parameter(name + ".w")), g.parameter(name + ".b"));
}

} // namespace

Var LanguageModel::norm(Graph& g, Var x, const std::string& name, Norm kind) const {
    if (kind == Norm::batch) return batch_norm(x, g.parameter(name + ".g"), g.parameter(name + ".b"));
    return layer_norm(x, g.parameter(name + ".g"), g.parameter(name + ".b"));
}

Var LanguageModel::self_attention(Graph& g, Var x, const std::string& name, std::size_t heads, bool causal,
                                  const Segments& segments) const {
    Var a = attention(linear(g, x, name + ".q"), linear(g, x, name + ".k"), linear(g, x, name + ".v"),
                      {heads, causal, segments});
    return linear(g, a, name + ".o");
}

Var LanguageModel::feed_forward(Graph& g, Var x, const std::string& name) const {
    return linear(g, gelu(linear(g, x, name + "1")), name + "2");
}

Var LanguageModel::audio_encode(Graph& g, Var features, const Segments& segments) const {
    const Tensor& f = features.value();
    if (f.rank() != 2 || f.cols() != encoder_.input_dim) {
        throw ShapeError("audio encoder expects [T, " + std::to_string(encoder_.input_dim) + "] features, got " +
                         shape_string(f.shape()));
    }
    const std::size_t T = f.rows(), D = config_.width;
    // Position within each utterance for the sinusoidal encoding.
    std::vector<std::size_t> pos(T);
    std::size_t longest = 1;
    {
        std::vector<std::size_t> bounds = segments.empty() ? std::vector<std::size_t>{0, T} : segments;
        for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
            for (std::size_t t = bounds[s]; t < bounds[s + 1]; ++t) pos[t] = t - bounds[s];
            longest = std::max(longest, bounds[s + 1] - bounds[s]);
        }
    }
    const Tensor table = sinusoidal_positions(longest, D);
    Tensor pe({T, D});
    for (std::size_t t = 0; t < T; ++t) std::copy_n(table.data() + pos[t] * D, D, pe.data() + t * D);

    const Norm kind = encoder_.norm;
    Var x = add(linear(g, layer_norm(features), "enc.in"), g.constant(std::move(pe)));
    for (std::size_t b = 0; b < encoder_.blocks; ++b) {
        const std::string name = "enc.b" + std::to_string(b);
        x = add(x, scale(feed_forward(g, norm(g, x, name + ".ffa.n", kind), name + ".ffa"), 0.5));
        x = add(x, self_attention(g, norm(g, x, name + ".attn.n", kind), name + ".attn", encoder_.heads, false,
                                  segments));
        Var c = linear(g, norm(g, x, name + ".conv.n", kind), name + ".conv.pw1");
        c = silu(depthwise_conv1d(c, g.parameter(name + ".conv.dw.w"), g.parameter(name + ".conv.dw.b"), segments));
        x = add(x, linear(g, c, name + ".conv.pw2"));
        x = add(x, scale(feed_forward(g, norm(g, x, name + ".ffb.n", kind), name + ".ffb"), 0.5));
        x = norm(g, x, name + ".out", kind);
    }
    return x;
}

Var LanguageModel::embed_inputs(Graph& g, const std::vector<const UnifiedSequence*>& batch,
                                Segments& segments) const {
    if (batch.empty()) throw Error("empty batch");
    segments.assign(1, 0);
    std::vector<const Tensor*> feats;
    Segments audio_segments{0};
    std::vector<std::size_t> token_ids;
    for (const auto* seq : batch) {
        if (seq->length() > config_.max_length) {
            throw RangeError("sequence of length " + std::to_string(seq->length()) + " exceeds max length " +
                             std::to_string(config_.max_length));
        }
        if (seq->audio_input()) {
            feats.push_back(&seq->features);
            audio_segments.push_back(audio_segments.back() + seq->features.rows());
        }
        for (auto id : seq->tokens) {
            if (id >= vocab_.size()) throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
            token_ids.push_back(id);
        }
        segments.push_back(segments.back() + seq->length());
    }
    const std::size_t audio_rows = audio_segments.back();
    std::vector<Var> parts;
    if (audio_rows > 0) {
        Tensor packed({audio_rows, encoder_.input_dim});
        std::size_t at = 0;
        for (const auto* f : feats) {
            if (f->cols() != encoder_.input_dim) {
                throw ShapeError("audio features " + shape_string(f->shape()) + " do not match encoder input width " +
                                 std::to_string(encoder_.input_dim));
            }
            std::copy(f->storage().begin(), f->storage().end(), packed.data() + at);
            at += f->size();
        }
        parts.push_back(audio_encode(g, g.input("features", std::move(packed)), audio_segments));
    }
    if (!token_ids.empty()) parts.push_back(embedding(g.parameter("lm.embed"), token_ids));
    Var pool = parts.size() == 1 ? parts.front() : concat(parts, 0);

    // Interleave encoder rows and token rows back into sequence order.
    std::vector<std::size_t> order, positions;
    std::size_t audio_at = 0, token_at = audio_rows;
    for (const auto* seq : batch) {
        for (std::size_t t = 0; t < seq->length(); ++t) {
            order.push_back(t < seq->feature_rows() ? audio_at++ : token_at++);
            positions.push_back(t);
        }
    }
    return add(gather_rows(pool, std::move(order)), gather_rows(g.parameter("lm.pos"), std::move(positions)));
}

Var LanguageModel::backbone(Graph& g, Var inputs, const Segments& segments) const {
    Var h = inputs;
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string name = "lm.l" + std::to_string(l);
        h = add(h, self_attention(g, norm(g, h, name + ".ln1", Norm::layer), name + ".attn", config_.heads, true,
                                  segments));
        h = add(h, feed_forward(g, norm(g, h, name + ".ln2", Norm::layer), name + ".ff"));
    }
    return norm(g, h, "lm.ln_f", Norm::layer);
}

Var LanguageModel::project(Graph& g, Var hidden) const { return matmul_nt(hidden, g.parameter("lm.embed")); }

Var LanguageModel::forward(Graph& g, const UnifiedSequence& seq) const {
    Segments segments;
    Var inputs = embed_inputs(g, {&seq}, segments);
    return project(g, backbone(g, inputs, segments));
}

Tensor LanguageModel::logits(const UnifiedSequence& seq) const {
    Graph g(const_cast<ParameterStore*>(&params_));
    return forward(g, seq).value();
}

std::vector<double> LanguageModel::next_logits(const UnifiedSequence& seq) const {
    Graph g(const_cast<ParameterStore*>(&params_));
    Segments segments;
    Var h = backbone(g, embed_inputs(g, {&seq}, segments), segments);
    const std::size_t T = seq.length();
    const Tensor out = project(g, slice_rows(h, T - 1, T)).value();
    return out.storage();
}

Var LanguageModel::loss(Graph& g, const std::vector<const UnifiedSequence*>& batch) const {
    Segments segments;
    Var h = backbone(g, embed_inputs(g, batch, segments), segments);
    std::vector<std::size_t> rows;
    std::vector<std::int64_t> labels;
    std::vector<double> weights;
    std::size_t offset = 0;
    const double per_seq = 1.0 / static_cast<double>(batch.size());
    for (const auto* seq : batch) {
        const auto l = seq->labels();
        const auto count = static_cast<double>(std::count_if(l.begin(), l.end(), [](auto v) { return v >= 0; }));
        if (count == 0) throw Error("sequence has an all-zero loss mask");
        for (std::size_t t = 0; t < l.size(); ++t) {
            if (l[t] < 0) continue;
            rows.push_back(offset + t);
            labels.push_back(l[t]);
            weights.push_back(per_seq / count);
        }
        offset += seq->length();
    }
    return cross_entropy(project(g, gather_rows(h, std::move(rows))), std::move(labels), std::move(weights));
}

Var masked_ce(Var logits, const std::vector<std::int64_t>& labels) {
    if (labels.size() != logits.value().rows()) {
        throw ShapeError("masked_ce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.value().rows()) + " logit rows");
    }
    const auto count = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto v) { return v >= 0; }));
    if (count == 0) throw Error("masked_ce: the loss mask is all zero");
    std::vector<double> weights(labels.size(), 1.0 / count);
    return cross_entropy(logits, labels, std::move(weights));
}

double masked_ce(const Tensor& logits, const UnifiedSequence& seq) {
    Graph g;
    return masked_ce(g.input("logits", logits), seq.labels()).value().item();
}

LmStepReport LmTrainer::step(const std::vector<const UnifiedSequence*>& batch) {
    Graph g(&model_.params());
    Var l = model_.loss(g, batch);
    const TensorMap grads = g.backward(l);
    adam_.update(model_.params(), grads);
    return {adam_.step(), l.value().item()};
}

double LmTrainer::measure(const std::vector<const UnifiedSequence*>& batch) const {
    Graph g(&model_.params());
    return model_.loss(g, batch).value().item();
}

} // namespace lgpt::lm
