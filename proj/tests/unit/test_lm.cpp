#include "lgpt/error.hpp"
#include "lgpt/lm/model.hpp"

#include "../support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lgpt;
using namespace lgpt::lm;

namespace {

LMConfig small_lm() {
    LMConfig c;
    c.layers = 2;
    c.width = 8;
    c.heads = 2;
    c.ff_dim = 16;
    c.max_length = 64;
    c.max_new_tokens = 40;
    return c;
}

AudioEncoderConfig small_encoder(Norm norm = Norm::layer) {
    AudioEncoderConfig c;
    c.blocks = 1;
    c.input_dim = 6;
    c.heads = 2;
    c.ff_dim = 8;
    c.conv_kernel = 3;
    c.norm = norm;
    return c;
}

Tensor random_features(std::size_t T, std::size_t F, Rng& rng) {
    Tensor t({T, F});
    for (auto& v : t.storage()) v = rng.normal();
    return t;
}

UnifiedSequence random_sequence(const UnifiedVocab& vocab, Rng& rng) {
    const std::size_t T = 1 + rng.index(6), n = rng.index(6);
    if (rng.index(2) == 0) {
        std::vector<std::size_t> targets;
        for (std::size_t i = 0; i < n; ++i) targets.push_back(97 + rng.index(16));
        return build_sequence(vocab, TaskId::asr, random_features(T, 6, rng), targets);
    }
    std::vector<std::size_t> text, audio;
    for (std::size_t i = 0; i < T; ++i) text.push_back(97 + rng.index(16));
    for (std::size_t i = 0; i < n; ++i) audio.push_back(vocab.audio(rng.index(vocab.audio_size())));
    return build_sequence(vocab, TaskId::tts, text, audio);
}

} // namespace

TEST(Vocab, RegistryIdsAreFixed) {
    const UnifiedVocab v;
    EXPECT_EQ(v.text_size(), 258u);
    EXPECT_EQ(v.size(), 258u + 1024u + 7u);
    const TaskId order[] = {TaskId::asr, TaskId::slu, TaskId::s2tt, TaskId::ser, TaskId::aac, TaskId::se, TaskId::tts};
    const char* names[] = {"<ASR>", "<SLU>", "<S2TT>", "<SER>", "<AAC>", "<SE>", "<TTS>"};
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_EQ(v.task(order[i]), 258u + 1024u + i);
        EXPECT_EQ(task_name(order[i]), names[i]);
        EXPECT_EQ(parse_task(names[i]), order[i]);
    }
    EXPECT_EQ(parse_task("s2tt"), TaskId::s2tt);
    EXPECT_FALSE(parse_task("<MT>").has_value());
    EXPECT_EQ(task_spec(TaskId::tts).input, Modality::text);
    EXPECT_EQ(task_spec(TaskId::se).output, Modality::audio);
}

TEST(Vocab, PartitionRoundTrip) {
    const UnifiedVocab v(1024, 100);
    EXPECT_EQ(v.size(), 1131u);
    std::size_t counts[3] = {0, 0, 0};
    for (std::size_t id = 0; id < v.size(); ++id) {
        const TokenRef ref = v.classify(id);
        ++counts[static_cast<int>(ref.kind)];
        EXPECT_EQ(v.id(ref), id);
    }
    EXPECT_EQ(counts[0], 100u);
    EXPECT_EQ(counts[1], 1024u);
    EXPECT_EQ(counts[2], 7u);
    EXPECT_THROW(v.classify(1131), RangeError);
}

TEST(Vocab, AudioTokensMirrorCodecCodes) {
    const UnifiedVocab v;
    for (std::size_t c : {0u, 1u, 511u, 1023u}) {
        EXPECT_EQ(v.audio(c), c + v.text_size());
        EXPECT_EQ(v.decode_audio({v.audio(c)}), std::vector<std::size_t>{c});
    }
    EXPECT_THROW(v.audio(1024), RangeError);
    EXPECT_THROW(v.decode_audio({5}), RangeError);
    EXPECT_EQ(v.decode_text(v.encode_text("abc")), "abc");
}

TEST(Sequence, AsrMaskCountsTargetsAndEnd) {
    const UnifiedVocab v;
    Rng rng(1);
    const auto seq = build_sequence(v, TaskId::asr, random_features(17, 240, rng), v.encode_text("abcde"));
    const auto m = seq.mask();
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 6);
    EXPECT_EQ(seq.length(), 17u + 1 + 1 + 5 + 1);
    for (std::size_t t = 0; t < 19; ++t) EXPECT_EQ(m[t], 0) << t;
    EXPECT_EQ(seq.token_at(17), v.task(TaskId::asr));
    EXPECT_EQ(seq.token_at(18), v.start());
    EXPECT_EQ(seq.token_at(seq.length() - 1), v.end());
}

TEST(Sequence, TtsTargetsAreOffsetAudioIds) {
    const UnifiedVocab v;
    std::vector<std::size_t> codes(25);
    for (std::size_t i = 0; i < 25; ++i) codes[i] = i * 40;
    const auto seq = build_sequence(v, TaskId::tts, v.encode_text("abcde"), v.encode_audio(codes));
    for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(seq.token_at(7 + i), codes[i] + v.text_size());
    const auto m = seq.mask();
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 26);
}

TEST(Sequence, EmptyTargetMasksOnlyEnd) {
    const UnifiedVocab v;
    Rng rng(2);
    const auto seq = build_sequence(v, TaskId::ser, random_features(3, 240, rng), {});
    const auto m = seq.mask();
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 1);
    EXPECT_EQ(m.back(), 1);
    const auto labels = seq.labels();
    EXPECT_EQ(labels[seq.length() - 2], static_cast<std::int64_t>(v.end()));
}

TEST(Sequence, RejectsBadInputs) {
    const UnifiedVocab v;
    Rng rng(3);
    const Tensor f = random_features(3, 240, rng);
    EXPECT_THROW(build_sequence(v, TaskId::asr, f, {v.audio(3)}), RangeError);
    EXPECT_THROW(build_sequence(v, TaskId::tts, v.encode_text("ab"), {97}), RangeError);
    EXPECT_THROW(build_sequence(v, TaskId::tts, f, {v.audio(1)}), Error);
    EXPECT_THROW(build_sequence(v, TaskId::asr, std::vector<std::size_t>{97}, {97}), Error);
    EXPECT_THROW(build_sequence(v, static_cast<TaskId>(9), f, {}), RangeError);
}

TEST(Sequence, PrefixEndsAtStartToken) {
    const UnifiedVocab v;
    Rng rng(4);
    const auto seq = build_sequence(v, TaskId::asr, random_features(4, 240, rng), v.encode_text("abc"));
    const auto p = seq.prefix();
    EXPECT_EQ(p.length(), 6u);
    EXPECT_EQ(p.token_at(5), v.start());
    const auto m = p.mask();
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 0);
}

TEST(AudioEncoder, PreservesLengthAndIsDeterministic) {
    const UnifiedVocab v(16);
    for (Norm norm : {Norm::layer, Norm::batch}) {
        LanguageModel model(v, small_lm(), small_encoder(norm), 1);
        Rng rng(5);
        for (std::size_t T : {1u, 17u, 100u}) {
            if (norm == Norm::batch && T == 1) continue;
            const Tensor f = random_features(T, 6, rng);
            Graph a(&model.params()), b(&model.params());
            const Tensor ya = model.audio_encode(a, a.input("f", f)).value();
            const Tensor yb = model.audio_encode(b, b.input("f", f)).value();
            EXPECT_EQ(ya.shape(), (Shape{T, 8}));
            EXPECT_EQ(ya, yb);
        }
        Graph g(&model.params());
        EXPECT_THROW(model.audio_encode(g, g.input("f", random_features(3, 5, rng))), ShapeError);
    }
}

TEST(AudioEncoder, GradientMatchesFiniteDifferences) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 2);
    Rng rng(6);
    const Tensor f = random_features(5, 6, rng);
    ParameterStore encoder_only;
    for (const auto& [name, t] : model.params().tensors()) {
        if (name.rfind("enc.", 0) == 0) encoder_only.add(name, t);
    }
    // A plain mean of layer-normalized rows is constant, so weight the output first.
    const Tensor w = random_features(5, 8, rng);
    // The graph resolves parameter names against the encoder-only store.
    auto r = lgpt::testing::grad_check(
        encoder_only,
        [&](Graph& g) { return mean(mul(model.audio_encode(g, g.input("f", f)), g.constant(w))); }, rng, 16, 1e-5,
        // Key biases shift every score of a query equally, so their true gradient is zero.
        [](const std::string& name) { return name.ends_with(".attn.k.b"); });
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Forward, LogitWidthIsUnifiedVocabulary) {
    const UnifiedVocab v(1024, 100);
    LanguageModel model(v, small_lm(), small_encoder(), 3);
    Rng rng(7);
    const auto seq = build_sequence(v, TaskId::asr, random_features(4, 6, rng), {97 % 98, 3});
    const Tensor logits = model.logits(seq);
    EXPECT_EQ(logits.shape(), (Shape{seq.length(), 1131}));
    Graph g;
    const Tensor p = softmax(g.input("z", logits)).value();
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0;
        for (double x : p.row(r)) s += x;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Forward, CausalityIsBitExact) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 4);
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t T = 4 + rng.index(12);
        const Tensor base = random_features(T, 8, rng);
        const std::size_t j = rng.index(T - 1);
        Tensor changed = base;
        for (std::size_t t = j + 1; t < T; ++t) {
            for (auto& x : changed.row(t)) x += rng.normal();
        }
        Graph a(&model.params()), b(&model.params());
        const Segments seg{0, T};
        const Tensor la = model.project(a, model.backbone(a, a.input("x", base), seg)).value();
        const Tensor lb = model.project(b, model.backbone(b, b.input("x", changed), seg)).value();
        for (std::size_t t = 0; t <= j; ++t) {
            for (std::size_t c = 0; c < la.cols(); ++c) ASSERT_EQ(la.at(t, c), lb.at(t, c)) << trial << " t=" << t;
        }
        bool later_differs = false;
        for (std::size_t c = 0; c < la.cols(); ++c) later_differs |= la.at(j + 1, c) != lb.at(j + 1, c);
        EXPECT_TRUE(later_differs);
    }
}

TEST(Forward, TokenChangesDoNotReachEarlierLogits) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 5);
    Rng rng(9);
    const auto seq = build_sequence(v, TaskId::asr, random_features(3, 6, rng), {97, 98, 99});
    auto other = seq;
    other.tokens[other.tokens.size() - 2] = 100;
    const Tensor a = model.logits(seq), b = model.logits(other);
    const std::size_t changed = seq.length() - 2;
    for (std::size_t t = 0; t < changed; ++t) {
        for (std::size_t c = 0; c < a.cols(); ++c) ASSERT_EQ(a.at(t, c), b.at(t, c));
    }
}

TEST(Forward, RejectsOverlongSequence) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 5);
    Rng rng(10);
    const auto seq = build_sequence(v, TaskId::asr, random_features(70, 6, rng), {97});
    EXPECT_THROW(model.logits(seq), RangeError);
}

TEST(MaskedCe, UniformLogitsGiveLogVocabulary) {
    const UnifiedVocab v(1024, 100);
    Rng rng(11);
    const auto seq = build_sequence(v, TaskId::asr, random_features(5, 6, rng), {1, 2, 3});
    const Tensor logits({seq.length(), 1131}, 0.25);
    EXPECT_NEAR(masked_ce(logits, seq), std::log(1131.0), 1e-9);
    EXPECT_NEAR(std::log(1131.0), 7.0309, 1e-4);
}

TEST(MaskedCe, ConfidentCorrectLogitsGiveZero) {
    const UnifiedVocab v(16);
    Rng rng(12);
    const auto seq = build_sequence(v, TaskId::asr, random_features(2, 6, rng), {97, 98});
    const auto labels = seq.labels();
    Tensor logits({seq.length(), v.size()});
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] >= 0) logits.at(t, static_cast<std::size_t>(labels[t])) = 200.0;
    }
    EXPECT_LT(masked_ce(logits, seq), 1e-80);
}

TEST(MaskedCe, MaskedOutRowsDoNotMatter) {
    const UnifiedVocab v(16);
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const auto seq = random_sequence(v, rng);
        Tensor logits = random_features(seq.length(), v.size(), rng);
        const double before = masked_ce(logits, seq);
        const auto labels = seq.labels();
        for (std::size_t t = 0; t < labels.size(); ++t) {
            if (labels[t] >= 0) continue;
            for (auto& x : logits.row(t)) x += 50.0 * rng.normal();
        }
        EXPECT_LT(std::abs(masked_ce(logits, seq) - before), 1e-12);
    }
    const auto prefix = build_sequence(v, TaskId::asr, random_features(1, 6, rng), {}).prefix();
    EXPECT_THROW(masked_ce(Tensor({prefix.length(), v.size()}), prefix), Error);
}

TEST(Decode, ImmediateEndGivesEmptyOutput) {
    const UnifiedVocab v(16);
    Rng rng(14);
    const auto prefix = build_sequence(v, TaskId::asr, random_features(2, 6, rng), {}).prefix();
    auto scorer = [&](const UnifiedSequence&) {
        std::vector<double> z(v.size(), 0.0);
        z[v.end()] = 5.0;
        return z;
    };
    const auto r = decode_autoregressive(prefix, scorer, v.end(), 64, {});
    EXPECT_TRUE(r.tokens.empty());
    EXPECT_EQ(r.diag.stop, StopReason::eos);
    EXPECT_FALSE(r.diag.looped);
}

TEST(Decode, EndlessRepetitionHitsCapAndIsFlagged) {
    const UnifiedVocab v(16);
    Rng rng(15);
    const auto prefix = build_sequence(v, TaskId::asr, random_features(2, 6, rng), {}).prefix();
    auto scorer = [&](const UnifiedSequence&) {
        std::vector<double> z(v.size(), 0.0);
        z[7] = 5.0;
        return z;
    };
    DecodeOptions options;
    options.max_new_tokens = 512;
    const auto r = decode_autoregressive(prefix, scorer, v.end(), 2048, options);
    EXPECT_EQ(r.tokens.size(), 512u);
    EXPECT_EQ(r.diag.stop, StopReason::cap);
    EXPECT_TRUE(r.diag.looped);
    EXPECT_THROW(decode_autoregressive(prefix, scorer, v.end(), 3, options), RangeError);
}

TEST(Decode, GreedyAndSeededTopKAreDeterministic) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 6);
    Rng rng(16);
    const auto prefix = build_sequence(v, TaskId::asr, random_features(3, 6, rng), {}).prefix();
    const auto a = decode(model, prefix), b = decode(model, prefix);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_LE(a.tokens.size(), small_lm().max_new_tokens);
    for (auto t : a.tokens) EXPECT_LT(t, v.symbols());

    auto config = small_lm();
    config.sampling = Sampling::top_k;
    config.sampling_seed = 99;
    LanguageModel sampler(v, config, small_encoder(), 6);
    EXPECT_EQ(decode(sampler, prefix).tokens, decode(sampler, prefix).tokens);
}

TEST(Decode, TtsOutputStaysInAudioRange) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 7);
    const auto prefix = build_sequence(v, TaskId::tts, v.encode_text("abc"), {}).prefix();
    for (auto t : decode(model, prefix).tokens) EXPECT_EQ(v.classify(t).kind, TokenKind::audio);
}

TEST(Loops, DetectorThresholds) {
    EXPECT_FALSE(has_loop(std::vector<std::size_t>(31, 7)));
    EXPECT_TRUE(has_loop(std::vector<std::size_t>(32, 7)));
    std::vector<std::size_t> cycle;
    for (int i = 0; i < 8; ++i) cycle.insert(cycle.end(), {1, 2, 3, 4});
    EXPECT_TRUE(has_loop(cycle));
    cycle.pop_back();
    EXPECT_FALSE(has_loop(cycle));
    std::vector<std::size_t> distinct(100);
    for (std::size_t i = 0; i < 100; ++i) distinct[i] = i;
    EXPECT_FALSE(has_loop(distinct));
}

TEST(Loops, Ratio) {
    std::vector<DecodeDiag> d(50);
    EXPECT_EQ(loop_ratio(d), 0.0);
    d[3].looped = d[40].looped = true;
    EXPECT_DOUBLE_EQ(loop_ratio(d), 0.04);
    EXPECT_THROW(loop_ratio({}), Error);
}

TEST(Training, DuplicatedBatchMatchesSingle) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 8);
    Rng rng(17);
    const auto seq = random_sequence(v, rng);
    LmTrainer trainer(model, {});
    EXPECT_NEAR(trainer.measure({&seq, &seq}), trainer.measure({&seq}), 1e-12);
    EXPECT_THROW(trainer.measure({}), Error);
}

TEST(Training, MaskedCeGradientsMatchFiniteDifferences) {
    const UnifiedVocab v(16);
    LanguageModel model(v, small_lm(), small_encoder(), 9);
    Rng rng(18);
    const auto a = build_sequence(v, TaskId::asr, random_features(4, 6, rng), {97, 98});
    const auto b = build_sequence(v, TaskId::tts, v.encode_text("ab"), {v.audio(3)});
    auto r = lgpt::testing::grad_check(
        model.params(), [&](Graph& g) { return model.loss(g, {&a, &b}); }, rng, 8);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Training, SmallStepsDescend) {
    const UnifiedVocab v(16);
    Rng rng(19);
    int descended = 0;
    for (int trial = 0; trial < 50; ++trial) {
        LanguageModel model(v, small_lm(), small_encoder(), 100 + trial);
        AdamConfig adam;
        adam.peak_lr = 1e-4;
        adam.warmup_steps = 1;
        LmTrainer trainer(model, adam);
        const auto seq = random_sequence(v, rng);
        const double before = trainer.step({&seq}).loss;
        descended += trainer.measure({&seq}) <= before;
    }
    EXPECT_GE(descended, 45);
}
