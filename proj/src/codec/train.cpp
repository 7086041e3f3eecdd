#include "lgpt/codec/codec.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/ops.hpp"

#include <algorithm>

namespace lgpt::codec {

CodecLossTerms codec_loss(Graph& g, Var x, Var recon, Var latents, const Tensor& sum_embedding,
                          const CodecConfig& config) {
    if (x.shape() != recon.shape()) {
        throw ShapeError("codec loss: signal " + shape_string(x.shape()) + " vs reconstruction " +
                         shape_string(recon.shape()));
    }
    if (latents.shape() != sum_embedding.shape()) {
        throw ShapeError("codec loss: latents " + shape_string(latents.shape()) + " vs embedding " +
                         shape_string(sum_embedding.shape()));
    }
    CodecLossTerms terms;
    terms.time = mean(abs(sub(x, recon)));
    for (std::size_t win : config.spectral_windows) {
        Var term = mean(abs(sub(stft_magnitude(x, win, win / 4), stft_magnitude(recon, win, win / 4))));
        terms.spectral = terms.spectral.valid() ? add(terms.spectral, term) : term;
    }
    if (!terms.spectral.valid()) terms.spectral = g.constant(Tensor::scalar(0.0));
    terms.commitment = scale(mean(square(sub(latents, g.constant(sum_embedding)))), config.commitment);
    terms.total = add(add(terms.time, terms.spectral), terms.commitment);
    return terms;
}

CodecLossValues codec_loss(const dsp::Waveform& x, const dsp::Waveform& recon, const Tensor& latents,
                           const Tensor& sum_embedding, const CodecConfig& config) {
    if (x.size() != recon.size()) {
        throw ShapeError("codec loss: signal length " + std::to_string(x.size()) + " vs reconstruction length " +
                         std::to_string(recon.size()));
    }
    if (x.empty()) throw ShapeError("codec loss of empty signal");
    Graph g;
    const auto terms = codec_loss(g, g.input("x", Tensor::vector(x.samples)), g.input("y", Tensor::vector(recon.samples)),
                                  g.input("z", latents), sum_embedding, config);
    return {terms.total.value().item(), terms.time.value().item(), terms.spectral.value().item(),
            terms.commitment.value().item()};
}

CodecTrainer::CodecTrainer(CodecModel& model, AdamConfig adam, std::uint64_t seed)
    : model_(model), adam_(adam), rng_(mix_seed(seed, 0x7a1)) {}

void CodecTrainer::init_codebooks(const std::vector<Tensor>& latents) {
    const std::size_t D = model_.config().latent_dim;
    std::vector<std::vector<double>> pool;
    for (const auto& t : latents) {
        if (t.rank() != 2 || t.cols() != D) throw ShapeError("codebook seeding expects [T, D] latents");
        for (std::size_t r = 0; r < t.rows(); ++r) pool.emplace_back(t.row(r).begin(), t.row(r).end());
    }
    if (pool.empty()) throw Error("codebook seeding needs at least one latent frame");
    Codebooks& books = model_.codebooks();
    const std::size_t K = books.size();
    std::vector<std::size_t> order(pool.size());
    for (std::size_t q = 0; q < books.stages(); ++q) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng_.shuffle(order);
        for (std::size_t k = 1; k < K; ++k) books.set(q, k, pool[order[(k - 1) % order.size()]].data());
        for (auto& r : pool) {
            const double* e = books.entry(q, nearest_code(books, q, r.data()));
            for (std::size_t i = 0; i < D; ++i) r[i] -= e[i];
        }
    }
    model_.ema_counts.fill(1.0);
    model_.ema_sums = books.tensor();
    model_.idle_steps.fill(0.0);
}

void CodecTrainer::update_codebooks(const Quantized& q) {
    Codebooks& books = model_.codebooks();
    const std::size_t K = books.size(), D = books.dim(), T = q.codes.frames;
    const double decay = model_.config().ema_decay;
    std::vector<double> counts(K), sums(K * D);
    for (std::size_t g = 0; g < q.codes.active_groups; ++g) {
        std::fill(counts.begin(), counts.end(), 0.0);
        std::fill(sums.begin(), sums.end(), 0.0);
        const Tensor& inputs = q.stage_inputs[g];
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t k = q.codes.at(t, g);
            counts[k] += 1.0;
            for (std::size_t i = 0; i < D; ++i) sums[k * D + i] += inputs.at(t, i);
        }
        for (std::size_t k = 1; k < K; ++k) {
            double& n = model_.ema_counts.at(g, k);
            double* s = model_.ema_sums.data() + (g * K + k) * D;
            double& idle = model_.idle_steps.at(g, k);
            if (counts[k] == 0.0) {
                idle += 1.0;
                continue;
            }
            idle = 0.0;
            n = decay * n + (1.0 - decay) * counts[k];
            std::vector<double> e(D);
            for (std::size_t i = 0; i < D; ++i) {
                s[i] = decay * s[i] + (1.0 - decay) * sums[k * D + i];
                e[i] = s[i] / n;
            }
            books.set(g, k, e.data());
        }
    }
}

namespace {

Tensor stack_batch(const std::vector<dsp::Waveform>& batch, const CodecConfig& config) {
    if (batch.empty()) throw Error("codec training batch is empty");
    const std::size_t n = batch.front().size();
    if (n == 0 || n % config.hop() != 0) {
        throw ShapeError("codec training clips must be a nonzero multiple of " + std::to_string(config.hop()) +
                         " samples");
    }
    Tensor x({batch.size(), n, 1});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b].size() != n) throw ShapeError("codec training clips must share one length");
        std::copy(batch[b].samples.begin(), batch[b].samples.end(), x.data() + b * n);
    }
    return x;
}

struct Forward {
    Var loss_total;
    CodecLossTerms terms;
    Quantized quantized;
};

Forward forward(Graph& g, const CodecModel& model, const Tensor& x, std::size_t n_active) {
    const CodecConfig& config = model.config();
    const std::size_t B = x.dim(0), n = x.dim(1), D = config.latent_dim;
    Var input = g.input("x", x);
    Var latents = model.encode(g, input);
    const std::size_t T = latents.shape()[1];
    Forward f;
    f.quantized = rvq_quantize(latents.value().reshaped({B * T, D}), n_active, model.codebooks());
    const Tensor sum = f.quantized.sum_embedding.reshaped({B, T, D});
    // Straight-through: the decoder sees the codewords, the encoder gets the decoder's gradient.
    Tensor offset = sum;
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] -= latents.value()[i];
    Var recon = model.decode(g, add(latents, g.constant(std::move(offset))));
    f.terms = codec_loss(g, reshape(input, {B, n}), reshape(recon, {B, n}), latents, sum, config);
    f.loss_total = f.terms.total;
    return f;
}

CodecLossValues values(const CodecLossTerms& t) {
    return {t.total.value().item(), t.time.value().item(), t.spectral.value().item(), t.commitment.value().item()};
}

} // namespace

CodecStepReport CodecTrainer::step(const std::vector<dsp::Waveform>& batch) {
    const Tensor x = stack_batch(batch, model_.config());
    const auto choices = dropout_choices(model_.config().num_quantizers);
    CodecStepReport report;
    report.n_active = choices[rng_.index(choices.size())];
    Graph g(&model_.params());
    Forward f = forward(g, model_, x, report.n_active);
    report.loss = values(f.terms);
    const TensorMap grads = g.backward(f.loss_total);
    adam_.update(model_.params(), grads);
    report.step = adam_.step();
    update_codebooks(f.quantized);

    const std::size_t threshold = model_.config().dead_code_steps;
    Codebooks& books = model_.codebooks();
    const std::size_t K = books.size(), D = books.dim();
    for (std::size_t g = 0; g < report.n_active; ++g) {
        const Tensor& inputs = f.quantized.stage_inputs[g];
        for (std::size_t k = 1; k < K; ++k) {
            if (model_.idle_steps.at(g, k) < static_cast<double>(threshold)) continue;
            const auto row = inputs.row(rng_.index(inputs.rows()));
            books.set(g, k, row.data());
            std::copy(row.begin(), row.end(), model_.ema_sums.data() + (g * K + k) * D);
            model_.ema_counts.at(g, k) = 1.0;
            model_.idle_steps.at(g, k) = 0.0;
            ++report.reseeded;
        }
    }
    return report;
}

CodecLossValues CodecTrainer::measure(const std::vector<dsp::Waveform>& batch) const {
    const Tensor x = stack_batch(batch, model_.config());
    Graph g(&model_.params());
    return values(forward(g, model_, x, model_.config().num_quantizers).terms);
}

} // namespace lgpt::codec
