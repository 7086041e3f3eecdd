#include "lgpt/vocoder/vocoder.hpp"

#include "lgpt/error.hpp"
#include "lgpt/lm/model.hpp"
#include "lgpt/numerics/init.hpp"

#include <algorithm>
#include <cmath>

namespace lgpt::vocoder {

ConditionBundle ConditionBundle::tts(std::vector<std::size_t> text, Tensor prompt) {
    ConditionBundle c;
    c.kind = ConditionKind::tts;
    c.text = std::move(text);
    c.prompt = std::move(prompt);
    return c;
}

ConditionBundle ConditionBundle::se(Tensor features) {
    ConditionBundle c;
    c.kind = ConditionKind::se;
    c.features = std::move(features);
    return c;
}

std::size_t ConditionBundle::rows() const {
    switch (kind) {
    case ConditionKind::tts: return text.size() + (prompt.rank() == 2 ? prompt.rows() : 0);
    case ConditionKind::se: return features.rank() == 2 ? features.rows() : 0;
    default: return 0;
    }
}

Tensor se_condition_features(const codec::CodecModel& codec, const dsp::Waveform& noisy) {
    return codec.encode_latents(noisy);
}

void PredictorConfig::validate() const {
    if (layers < 1) throw ConfigError("vocoder.layers must be >= 1");
    if (width < 1 || heads < 1 || width % heads != 0) throw ConfigError("vocoder.width must be divisible by vocoder.heads");
    if (ff_dim < 1 || text_tokens < 1 || feature_dim < 1) throw ConfigError("vocoder dimensions must be >= 1");
    if (max_rows < 1) throw ConfigError("vocoder.max_rows must be >= 1");
}

namespace {

enum SegmentType : std::size_t { kText, kPrompt, kFeatures, kCodes, kTypeCount };

Var linear(Graph& g, Var x, const std::string& name) {
    return add(matmul(x, g.parameter(name + ".w")), g.parameter(name + ".b"));
}

void add_linear(ParameterStore& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    p.add(name + ".w", init::glorot({in, out}, in, out, rng));
    p.add(name + ".b", init::zeros({out}));
}

void add_trunk(ParameterStore& p, const std::string& prefix, std::size_t layers, std::size_t D, std::size_t ff,
               Rng& rng) {
    auto norm = [&](const std::string& name) {
        p.add(name + ".g", init::ones({D}));
        p.add(name + ".b", init::zeros({D}));
    };
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string name = prefix + ".l" + std::to_string(l);
        norm(name + ".ln1");
        for (const char* q : {".q", ".k", ".v", ".o"}) add_linear(p, name + ".attn" + q, D, D, rng);
        norm(name + ".ln2");
        add_linear(p, name + ".ff1", D, ff, rng);
        add_linear(p, name + ".ff2", ff, D, rng);
    }
    norm(prefix + ".ln_f");
}

// Pre-norm bidirectional transformer; returns the final normalized states.
Var trunk(Graph& g, Var h, const std::string& prefix, std::size_t layers, std::size_t heads) {
    auto ln = [&](Var x, const std::string& name) {
        return layer_norm(x, g.parameter(name + ".g"), g.parameter(name + ".b"));
    };
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string name = prefix + ".l" + std::to_string(l);
        Var x = ln(h, name + ".ln1");
        Var a = attention(linear(g, x, name + ".attn.q"), linear(g, x, name + ".attn.k"),
                          linear(g, x, name + ".attn.v"), {heads, false, {}});
        h = add(h, linear(g, a, name + ".attn.o"));
        x = ln(h, name + ".ln2");
        h = add(h, linear(g, gelu(linear(g, x, name + ".ff1")), name + ".ff2"));
    }
    return ln(h, prefix + ".ln_f");
}

Tensor type_rows(std::size_t type, std::size_t rows) {
    Tensor onehot({rows, kTypeCount});
    for (std::size_t r = 0; r < rows; ++r) onehot.at(r, type) = 1.0;
    return onehot;
}

} // namespace

Predictor::Predictor(PredictorConfig config, const codec::Codebooks& books, std::uint64_t seed) : config_(config) {
    config_.validate();
    if (books.dim() != config_.width) {
        throw ConfigError("vocoder.width " + std::to_string(config_.width) + " must equal the codec latent dim " +
                          std::to_string(books.dim()));
    }
    const std::size_t K = books.size(), D = books.dim();
    first_stage_ = Tensor({K, D});
    for (std::size_t k = 0; k < K; ++k) std::copy_n(books.entry(0, k), D, first_stage_.data() + k * D);

    Rng rng(mix_seed(seed, 0x70c));
    params_.add("voc.text", init::normal({config_.text_tokens, D}, 0.1, rng));
    params_.add("voc.type", init::normal({kTypeCount, D}, 0.1, rng));
    add_linear(params_, "voc.prompt", D, D, rng);
    add_linear(params_, "voc.feat", config_.feature_dim, D, rng);
    add_linear(params_, "voc.in", D, D, rng);
    add_trunk(params_, "voc", config_.layers, D, config_.ff_dim, rng);
    add_linear(params_, "voc.head", D, D, rng);
}

Var Predictor::payload(Graph& g, const ConditionBundle& cond) const {
    const std::size_t D = config_.width;
    Var type = g.parameter("voc.type");
    std::vector<Var> parts;
    // Every segment restarts its positions at 0, so SE row t lines up with code frame t.
    auto tagged = [&](Var rows, std::size_t kind) {
        const std::size_t n = rows.value().rows();
        parts.push_back(add(add(rows, matmul(g.constant(type_rows(kind, n)), type)),
                            g.constant(lm::sinusoidal_positions(n, D))));
    };
    switch (cond.kind) {
    case ConditionKind::tts:
        if (cond.text.empty()) throw Error("tts condition without text");
        for (auto id : cond.text) {
            if (id >= config_.text_tokens) throw RangeError("condition text token " + std::to_string(id) + " out of range");
        }
        tagged(embedding(g.parameter("voc.text"), cond.text), kText);
        if (cond.prompt.rank() == 2 && cond.prompt.rows() > 0) {
            if (cond.prompt.cols() != D) throw ShapeError("prompt embedding width must be " + std::to_string(D));
            tagged(linear(g, g.constant(cond.prompt), "voc.prompt"), kPrompt);
        }
        break;
    case ConditionKind::se:
        if (cond.features.rank() != 2 || cond.features.rows() == 0 || cond.features.cols() != config_.feature_dim) {
            throw ShapeError("se condition must be [T, " + std::to_string(config_.feature_dim) + "], got " +
                             shape_string(cond.features.shape()));
        }
        tagged(linear(g, g.constant(cond.features), "voc.feat"), kFeatures);
        break;
    default: break;
    }
    if (parts.empty()) return g.constant(Tensor({0, D}));
    return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Var Predictor::predict(Graph& g, const std::vector<std::size_t>& first_group, const ConditionBundle& cond) const {
    if (first_group.empty()) throw Error("predictor needs at least one code frame");
    const std::size_t K = first_stage_.rows(), T = first_group.size();
    for (auto k : first_group) {
        if (k >= K) throw RangeError("first-group code " + std::to_string(k) + " outside codebook of size " +
                                     std::to_string(K));
    }
    const std::size_t C = cond.rows();
    if (C + T > config_.max_rows) {
        throw RangeError("predictor input of " + std::to_string(C + T) + " rows exceeds " +
                         std::to_string(config_.max_rows));
    }
    ++passes_;
    Var c1 = embedding(g.constant(first_stage_), first_group);
    Var codes = add(add(linear(g, c1, "voc.in"), matmul(g.constant(type_rows(kCodes, T)), g.parameter("voc.type"))),
                    g.constant(lm::sinusoidal_positions(T, config_.width)));
    // SE features share the code frame rate, so they also feed the code rows directly.
    if (cond.kind == ConditionKind::se && cond.features.rank() == 2 && cond.features.rows() == T &&
        cond.features.cols() == config_.feature_dim) {
        codes = add(codes, linear(g, g.constant(cond.features), "voc.feat"));
    }
    Var x = C == 0 ? codes : concat({payload(g, cond), codes}, 0);
    Var h = trunk(g, x, "voc", config_.layers, config_.heads);
    if (C > 0) h = slice_rows(h, C, C + T);
    return add(c1, linear(g, h, "voc.head"));
}

Tensor Predictor::predict_sum_embedding(const std::vector<std::size_t>& first_group,
                                        const ConditionBundle& cond) const {
    Graph g(const_cast<ParameterStore*>(&params_));
    return predict(g, first_group, cond).value();
}

Var l_pre(Var target, Var estimate) {
    if (target.shape() != estimate.shape()) {
        throw ShapeError("l_pre: target " + shape_string(target.shape()) + " vs estimate " +
                         shape_string(estimate.shape()));
    }
    Var d = sub(target, estimate);
    return sum(add(abs(d), square(d)));
}

double l_pre(const Tensor& target, const Tensor& estimate) {
    Graph g;
    return l_pre(g.constant(target), g.constant(estimate)).value().item();
}

Tensor target_sum_embedding(const codec::CodeFrameSeq& codes, const codec::Codebooks& books) {
    return codec::rvq_dequantize(codes, codes.active_groups, books);
}

dsp::Waveform synthesize(const std::vector<std::size_t>& first_group, const ConditionBundle& cond,
                         const codec::CodecModel& codec, const SumEstimator& estimator) {
    if (first_group.empty()) throw Error("cannot synthesize from zero frames");
    return codec.decode_waveform(estimator(first_group, cond));
}

dsp::Waveform synthesize(const std::vector<std::size_t>& first_group, const ConditionBundle& cond,
                         const codec::CodecModel& codec, const Predictor& predictor) {
    return synthesize(first_group, cond, codec, [&predictor](const auto& codes, const auto& c) {
        return predictor.predict_sum_embedding(codes, c);
    });
}

MultistepBaseline::MultistepBaseline(MultistepConfig config, const codec::Codebooks& books, std::uint64_t seed)
    : config_(config), books_(books) {
    if (config_.layers < 1 || config_.heads < 1 || config_.width % config_.heads != 0 || config_.ff_dim < 1) {
        throw ConfigError("invalid multistep baseline dimensions");
    }
    if (books.dim() != config_.width) throw ConfigError("multistep width must equal the codec latent dim");
    const std::size_t D = config_.width;
    Rng rng(mix_seed(seed, 0x3a5));
    params_.add("ms.stage", init::normal({books.stages(), D}, 0.1, rng));
    add_linear(params_, "ms.in", D, D, rng);
    add_trunk(params_, "ms", config_.layers, D, config_.ff_dim, rng);
    add_linear(params_, "ms.head", D, D, rng);
}

Var MultistepBaseline::logits(Graph& g, const codec::CodeFrameSeq& codes, std::size_t group) const {
    const std::size_t Q = books_.stages(), K = books_.size(), D = books_.dim(), T = codes.frames;
    if (group < 1 || group >= Q) throw RangeError("multistep group " + std::to_string(group) + " outside [1, Q)");
    if (codes.active_groups < group) throw RangeError("multistep needs the groups before the predicted one");
    if (T == 0) throw Error("multistep baseline needs at least one frame");
    if (T > config_.max_rows) throw RangeError("multistep input exceeds max rows");
    ++passes_;
    Tensor prior({T, D});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t q = 0; q < group; ++q) {
            const double* e = books_.entry(q, codes.at(t, q));
            for (std::size_t i = 0; i < D; ++i) prior.at(t, i) += e[i];
        }
    }
    Tensor stage({T, Q});
    for (std::size_t t = 0; t < T; ++t) stage.at(t, group) = 1.0;
    Var x = add(linear(g, g.constant(std::move(prior)), "ms.in"), matmul(g.constant(std::move(stage)), g.parameter("ms.stage")));
    x = add(x, g.constant(lm::sinusoidal_positions(T, D)));
    Var h = linear(g, trunk(g, x, "ms", config_.layers, config_.heads), "ms.head");
    // Negative squared distance to each codeword, up to a per-row constant.
    Tensor book({K, D}), bias({K});
    for (std::size_t k = 0; k < K; ++k) {
        const double* e = books_.entry(group, k);
        std::copy_n(e, D, book.data() + k * D);
        for (std::size_t i = 0; i < D; ++i) bias[k] -= e[i] * e[i];
    }
    return add(scale(matmul_nt(h, g.constant(std::move(book))), 2.0), g.constant(std::move(bias)));
}

codec::CodeFrameSeq MultistepBaseline::complete(const std::vector<std::size_t>& first_group) const {
    if (first_group.empty()) throw Error("multistep baseline needs at least one frame");
    const std::size_t Q = books_.stages(), K = books_.size(), T = first_group.size();
    codec::CodeFrameSeq codes(T, Q, 1);
    for (std::size_t t = 0; t < T; ++t) {
        if (first_group[t] >= K) throw RangeError("first-group code outside the codebook");
        codes.at(t, 0) = static_cast<std::uint16_t>(first_group[t]);
    }
    for (std::size_t q = 1; q < Q; ++q) {
        Graph g(const_cast<ParameterStore*>(&params_));
        const Tensor l = logits(g, codes, q).value();
        for (std::size_t t = 0; t < T; ++t) {
            const double* row = l.data() + t * K;
            codes.at(t, q) = static_cast<std::uint16_t>(std::max_element(row, row + K) - row);
        }
        codes.active_groups = q + 1;
    }
    return codes;
}

dsp::Waveform MultistepBaseline::synthesize(const std::vector<std::size_t>& first_group,
                                            const codec::CodecModel& codec) const {
    const codec::CodeFrameSeq codes = complete(first_group);
    return codec.decode_codes(codes, codes.active_groups);
}

MultistepConfig matched_multistep(const PredictorConfig& predictor, const codec::Codebooks& books) {
    const auto target = static_cast<double>(Predictor(predictor, books).params().element_count());
    MultistepConfig c{predictor.layers, predictor.width, predictor.heads, 1, predictor.max_rows};
    const auto base = static_cast<double>(MultistepBaseline(c, books).params().element_count());
    // Each extra feed-forward unit adds an input column, an output row and a bias per layer.
    const auto per_unit = static_cast<double>(c.layers * (2 * c.width + 1));
    c.ff_dim = static_cast<std::size_t>(std::max(1.0, 1.0 + std::round((target - base) / per_unit)));
    return c;
}

} // namespace lgpt::vocoder
