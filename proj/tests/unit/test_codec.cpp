#include "lgpt/codec/codec.hpp"
#include "lgpt/error.hpp"
#include "lgpt/numerics/ops.hpp"

#include "../support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

using namespace lgpt;
using namespace lgpt::codec;

namespace {

CodecConfig tiny_config() {
    CodecConfig c;
    c.strides = {2, 2};
    c.channels = {2, 3, 3};
    c.latent_dim = 3;
    c.num_quantizers = 4;
    c.codebook_size = 8;
    c.spectral_windows = {16, 8};
    return c;
}

Codebooks random_books(std::size_t Q, std::size_t K, std::size_t D, Rng& rng) {
    Codebooks books(Q, K, D);
    std::vector<double> e(D);
    for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t k = 1; k < K; ++k) {
            for (auto& v : e) v = rng.normal(0.0, 1.0 / static_cast<double>(q + 1));
            books.set(q, k, e.data());
        }
    }
    return books;
}

Tensor random_latents(std::size_t T, std::size_t D, Rng& rng) {
    Tensor t({T, D});
    for (auto& v : t.storage()) v = rng.normal();
    return t;
}

// Exhaustive scan with a plain summation, independent of the early-exit search.
std::size_t brute_nearest(const Codebooks& books, std::size_t stage, const double* x, double* best_out = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < books.size(); ++k) {
        double d = 0;
        for (std::size_t i = 0; i < books.dim(); ++i) d += (x[i] - books.entry(stage, k)[i]) * (x[i] - books.entry(stage, k)[i]);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (best_out) *best_out = best_d;
    return best;
}

dsp::Waveform noise(std::size_t n, Rng& rng) {
    dsp::Waveform w;
    for (std::size_t i = 0; i < n; ++i) w.samples.push_back(rng.uniform(-0.5, 0.5));
    return w;
}

} // namespace

TEST(CodecConfig, DefaultsGiveTwentyFiveHertz) {
    CodecConfig c;
    EXPECT_EQ(c.hop(), 640u);
    EXPECT_DOUBLE_EQ(c.token_rate(), 25.0);
    EXPECT_NO_THROW(c.validate());
    c.codebook_size = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = CodecConfig{};
    c.channels.pop_back();
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CodecModel, LengthLaws) {
    CodecModel model(CodecConfig{}, 3);
    dsp::Waveform w;
    w.samples.assign(16000, 0.0);
    const Tensor z = model.encode_latents(w);
    EXPECT_EQ(z.rows(), 25u);
    EXPECT_TRUE(z.all_finite());
    w.samples.push_back(0.0);
    EXPECT_EQ(model.encode_latents(w).rows(), 26u);
    EXPECT_EQ(model.decode_waveform(Tensor({25, 64})).size(), 16000u);
    EXPECT_THROW(model.encode_latents(dsp::Waveform{}), Error);
    EXPECT_THROW(model.decode_waveform(Tensor({25, 63})), ShapeError);
}

TEST(CodecModel, RandomRoundTripIsFiniteAndClamped) {
    Rng rng(5);
    CodecModel model(CodecConfig{}, 5);
    const auto w = noise(3000, rng);
    const auto codes = model.encode_codes(w, 32);
    const auto out = model.decode_codes(codes, 32);
    EXPECT_EQ(out.size(), 3200u);
    for (double v : out.samples) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_LE(std::abs(v), 1.0);
    }
}

TEST(Rvq, ExactCodewordIsSelected) {
    Rng rng(1);
    const Codebooks books = random_books(3, 16, 5, rng);
    Tensor z({1, 5});
    std::copy(books.entry(0, 7), books.entry(0, 7) + 5, z.data());
    const Quantized q = rvq_quantize(z, 1, books);
    EXPECT_EQ(q.codes.at(0, 0), 7);
    for (double v : q.residual.values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(q.sum_embedding, z);
}

TEST(Rvq, TwoStageToyExample) {
    Codebooks books(2, 3, 2);
    const double c1[][2] = {{0, 0}, {1, 0}, {0, 1}};
    books.set(0, 1, c1[1]);
    books.set(0, 2, c1[2]);
    const double c2[] = {-0.1, 0.2};
    books.set(1, 1, c2);
    // Stage 2 has only two real entries; make the third far away.
    const double far[] = {100, 100};
    books.set(1, 2, far);
    const Tensor z = Tensor::matrix({{0.9, 0.2}});
    const Quantized q = rvq_quantize(z, 2, books);
    EXPECT_EQ(q.codes.at(0, 0), brute_nearest(books, 0, z.data()));
    EXPECT_EQ(q.codes.at(0, 0), 1);
    EXPECT_EQ(q.codes.at(0, 1), 1);
    EXPECT_NEAR(q.residual[0], 0.0, 1e-15);
    EXPECT_NEAR(q.residual[1], 0.0, 1e-15);
}

TEST(Rvq, TiesGoToLowestIndex) {
    Codebooks books(1, 4, 1);
    const double a = 1.0, b = -1.0;
    books.set(0, 1, &a);
    books.set(0, 2, &b);
    books.set(0, 3, &a);
    EXPECT_EQ(nearest_code(books, 0, std::vector<double>{0.0}.data()), 0u);
    EXPECT_EQ(nearest_code(books, 0, std::vector<double>{0.9}.data()), 1u);
    EXPECT_EQ(nearest_code(books, 0, std::vector<double>{-0.6}.data()), 2u);
}

TEST(Rvq, InvariantsOnRandomFrames) {
    Rng rng(11);
    for (std::size_t Q : {1u, 3u, 6u}) {
        const Codebooks books = random_books(Q, 12, 4, rng);
        const Tensor z = random_latents(50, 4, rng);
        const Quantized q = rvq_quantize(z, Q, books);
        for (std::size_t i = 0; i < z.size(); ++i) {
            EXPECT_LE(std::abs(z[i] - (q.sum_embedding[i] + q.residual[i])), 1e-12);
        }
        for (std::size_t t = 0; t < z.rows(); ++t) {
            double prev = std::numeric_limits<double>::infinity();
            for (std::size_t g = 0; g < Q; ++g) {
                const double* x = q.stage_inputs[g].data() + t * 4;
                double best = 0;
                brute_nearest(books, g, x, &best);
                double chosen = 0;
                const double* e = books.entry(g, q.codes.at(t, g));
                for (std::size_t i = 0; i < 4; ++i) chosen += (x[i] - e[i]) * (x[i] - e[i]);
                EXPECT_LE(chosen, best) << "t=" << t << " g=" << g << " k=" << q.codes.at(t, g) << " brute=" << brute_nearest(books, g, x) << " diff=" << chosen - best;
                double energy = 0;
                for (std::size_t i = 0; i < 4; ++i) energy += x[i] * x[i];
                EXPECT_LE(energy, prev);
                prev = energy;
            }
        }
    }
}

TEST(Rvq, PrefixConsistency) {
    Rng rng(2);
    const Codebooks books = random_books(8, 16, 3, rng);
    const Tensor z = random_latents(20, 3, rng);
    const auto full = rvq_quantize(z, 8, books);
    const auto four = rvq_quantize(z, 4, books);
    EXPECT_EQ(full.codes.truncated(4), four.codes.truncated(4));
}

TEST(Rvq, DequantizeMatchesQuantize) {
    Rng rng(3);
    const Codebooks books = random_books(4, 16, 3, rng);
    const Tensor z = random_latents(10, 3, rng);
    const auto q = rvq_quantize(z, 3, books);
    EXPECT_EQ(rvq_dequantize(q.codes, 3, books), q.sum_embedding);

    const Tensor one = rvq_dequantize(q.codes, 1, books), two = rvq_dequantize(q.codes, 2, books);
    for (std::size_t t = 0; t < 10; ++t) {
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_NEAR(two.at(t, i) - one.at(t, i), books.entry(1, q.codes.at(t, 1))[i], 1e-15);
        }
    }
    const CodeFrameSeq zeros(10, 4, 4);
    const Tensor zero_sum = rvq_dequantize(zeros, 4, books);
    for (double v : zero_sum.values()) EXPECT_EQ(v, 0.0);
}

TEST(Rvq, RangeErrors) {
    Rng rng(4);
    const Codebooks books = random_books(2, 4, 3, rng);
    const Tensor z = random_latents(2, 3, rng);
    EXPECT_THROW(rvq_quantize(z, 0, books), RangeError);
    EXPECT_THROW(rvq_quantize(z, 3, books), RangeError);
    CodeFrameSeq bad(1, 2, 2);
    bad.at(0, 1) = 4;
    EXPECT_THROW(rvq_dequantize(bad, 2, books), RangeError);
    EXPECT_THROW(rvq_dequantize(bad, 3, books), RangeError);
}

TEST(CodecLoss, ZeroAtPerfectReconstruction) {
    Rng rng(6);
    const auto x = noise(640, rng);
    const Tensor z = random_latents(4, 3, rng);
    const auto l = codec_loss(x, x, z, z, CodecConfig{});
    EXPECT_EQ(l.total, 0.0);
}

TEST(CodecLoss, TimeTermOfSineAgainstSilence) {
    dsp::Waveform x, y;
    for (int i = 0; i < 16000; ++i) x.samples.push_back(std::sin(2 * std::numbers::pi * 997.0 * i / 16000.0));
    y.samples.assign(16000, 0.0);
    double oracle = 0;
    for (double v : x.samples) oracle += std::abs(v);
    oracle /= 16000.0;
    const Tensor z({1, 2});
    const auto l = codec_loss(x, y, z, z, CodecConfig{});
    EXPECT_NEAR(l.time, oracle, 1e-12);
    EXPECT_NEAR(l.time, 2.0 / std::numbers::pi, 1e-3);
}

TEST(CodecLoss, CommitmentIsLinearInWeight) {
    Rng rng(7);
    const auto x = noise(640, rng);
    const Tensor z = random_latents(4, 3, rng), e = random_latents(4, 3, rng);
    CodecConfig c;
    const double one = codec_loss(x, x, z, e, c).commitment;
    c.commitment *= 2;
    EXPECT_EQ(codec_loss(x, x, z, e, c).commitment, 2 * one);
    EXPECT_GT(one, 0.0);
    dsp::Waveform short_x = x;
    short_x.samples.pop_back();
    EXPECT_THROW(codec_loss(x, short_x, z, e, c), ShapeError);
}

TEST(CodecLoss, GradientsMatchFiniteDifferences) {
    Rng rng(8);
    CodecModel model(tiny_config(), 8);
    // Offset the clip so no |x - recon| or spectral difference sits near the L1 kink.
    auto clip = noise(32, rng);
    for (auto& v : clip.samples) v += 2.0;
    auto build = [&](Graph& g) {
        Var x = g.input("x", Tensor({1, 32, 1}, clip.samples));
        Var latents = model.encode(g, x);
        const Quantized q = rvq_quantize(latents.value().reshaped({8, 3}), 2, model.codebooks());
        const Tensor sum = q.sum_embedding.reshaped({1, 8, 3});
        Tensor offset = sum;
        for (std::size_t i = 0; i < sum.size(); ++i) offset[i] -= latents.value()[i];
        Var recon = model.decode(g, add(latents, g.constant(offset)));
        return codec_loss(g, reshape(x, {1, 32}), reshape(recon, {1, 32}), latents, sum, model.config()).total;
    };
    const auto r = lgpt::testing::grad_check(model.params(), build, rng, 64);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
    EXPECT_GT(r.checked, 100u);
}

TEST(CodecTrainer, FrozenLossIsRepeatable) {
    Rng rng(9);
    std::vector<dsp::Waveform> batch{noise(64, rng), noise(64, rng)};
    CodecModel a(tiny_config(), 1), b(tiny_config(), 1);
    CodecTrainer ta(a, {}, 42), tb(b, {}, 42);
    EXPECT_EQ(ta.measure(batch).total, ta.measure(batch).total);
    for (int i = 0; i < 3; ++i) {
        const auto ra = ta.step(batch), rb = tb.step(batch);
        EXPECT_EQ(ra.loss.total, rb.loss.total);
        EXPECT_EQ(ra.n_active, rb.n_active);
    }
    EXPECT_EQ(a.state(), b.state());
}

TEST(CodecTrainer, UnitDecayLeavesCodebooksUnchanged) {
    Rng rng(10);
    auto config = tiny_config();
    config.ema_decay = 1.0;
    CodecModel model(config, 2);
    CodecTrainer trainer(model, {}, 3);
    std::vector<dsp::Waveform> batch{noise(64, rng)};
    trainer.init_codebooks({model.encode_latents(batch[0])});
    const Codebooks before = model.codebooks();
    for (int i = 0; i < 5; ++i) trainer.step(batch);
    EXPECT_EQ(model.codebooks(), before);
}

TEST(CodecTrainer, EmaMovesUsedCodesAndReseedsDeadOnes) {
    Rng rng(12);
    auto config = tiny_config();
    config.dead_code_steps = 2;
    CodecModel model(config, 4);
    CodecTrainer trainer(model, {}, 5);
    std::vector<dsp::Waveform> batch{noise(64, rng), noise(64, rng)};
    const Codebooks before = model.codebooks();
    std::size_t reseeded = 0;
    for (int i = 0; i < 4; ++i) reseeded += trainer.step(batch).reseeded;
    EXPECT_GT(reseeded, 0u);
    EXPECT_NE(model.codebooks(), before);
    for (std::size_t q = 0; q < config.num_quantizers; ++q) {
        for (std::size_t i = 0; i < config.latent_dim; ++i) EXPECT_EQ(model.codebooks().entry(q, 0)[i], 0.0);
    }
}

TEST(CodecTrainer, DropoutChoices) {
    EXPECT_EQ(dropout_choices(32).size(), 32u);
    EXPECT_EQ(dropout_choices(32).back(), 32u);
    EXPECT_EQ(dropout_choices(5), (std::vector<std::size_t>{1, 2, 3, 4, 5}));
    EXPECT_EQ(dropout_choices(1), (std::vector<std::size_t>{1}));
}

TEST(CodecTrainer, RejectsEmptyOrRaggedBatch) {
    CodecModel model(tiny_config(), 1);
    CodecTrainer trainer(model, {}, 1);
    EXPECT_THROW(trainer.step({}), Error);
    dsp::Waveform a, b;
    a.samples.assign(8, 0.1);
    b.samples.assign(12, 0.1);
    EXPECT_THROW(trainer.step({a, b}), ShapeError);
}

TEST(CodecModel, StateRoundTrip) {
    CodecModel a(tiny_config(), 1), b(tiny_config(), 2);
    EXPECT_NE(a.state(), b.state());
    b.load_state(a.state());
    EXPECT_EQ(a.state(), b.state());
    CodecModel wide(CodecConfig{}, 1);
    EXPECT_THROW(wide.load_state(a.state()), FormatError);
}

TEST(Codes, TextAndBinaryRoundTrip) {
    CodeFrameSeq codes(3, 4, 4);
    for (std::size_t i = 0; i < codes.indices.size(); ++i) codes.indices[i] = static_cast<std::uint16_t>(i * 77 % 1024);
    const std::string text = codes_to_text(codes, 1024);
    EXPECT_EQ(text.substr(0, text.find('\n')), "# Q=4 K=1024 T=3");
    EXPECT_EQ(codes_from_text(text), codes);
    EXPECT_EQ(codes_from_binary(codes_to_binary(codes)), codes);

    auto bytes = codes_to_binary(codes);
    bytes[0] = 'X';
    EXPECT_THROW(codes_from_binary(bytes), FormatError);
    bytes = codes_to_binary(codes);
    bytes.pop_back();
    EXPECT_THROW(codes_from_binary(bytes), FormatError);
    EXPECT_THROW(codes_from_text("# Q=1 K=4 T=1\n4\n"), FormatError);
    EXPECT_THROW(codes_from_text("# Q=2 K=4 T=1\n1\n"), FormatError);
}
