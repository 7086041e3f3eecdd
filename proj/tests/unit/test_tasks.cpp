#include "lgpt/error.hpp"
#include "lgpt/tasks/corpus.hpp"
#include "lgpt/tasks/harness.hpp"
#include "lgpt/tasks/metrics.hpp"
#include "lgpt/tasks/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <set>

using namespace lgpt;
using namespace lgpt::tasks;

namespace {

// Plain recursion over the three edit moves, no table.
std::size_t naive_edit(const std::vector<std::size_t>& a, std::size_t i, const std::vector<std::size_t>& b,
                       std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    if (a[i] == b[j]) return naive_edit(a, i + 1, b, j + 1);
    return 1 + std::min({naive_edit(a, i + 1, b, j), naive_edit(a, i, b, j + 1), naive_edit(a, i + 1, b, j + 1)});
}

std::vector<std::size_t> random_string(Rng& rng, std::size_t max_len, std::size_t alphabet) {
    std::vector<std::size_t> s(rng.index(max_len + 1));
    for (auto& v : s) v = rng.index(alphabet);
    return s;
}

codec::CodecConfig small_codec() {
    codec::CodecConfig c;
    c.strides = {8, 5, 4, 2, 2};
    c.channels = {4, 4, 4, 4, 8, 8};
    c.latent_dim = 8;
    c.num_quantizers = 4;
    c.codebook_size = 16;
    return c;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("lgpt_tasks_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST(Corpus, SeedFixesCorpusExactly) {
    const CorpusSpec spec;
    for (ToyTask t : {ToyTask::asr, ToyTask::se, ToyTask::tts}) {
        const auto a = gen_corpus(spec, t, 6, 42), b = gen_corpus(spec, t, 6, 42);
        ASSERT_EQ(a.size(), 6u);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].id, b[i].id);
            EXPECT_EQ(a[i].symbols, b[i].symbols);
            EXPECT_EQ(a[i].input.samples, b[i].input.samples);
            EXPECT_EQ(a[i].clean.samples, b[i].clean.samples);
        }
        EXPECT_NE(gen_corpus(spec, t, 6, 43)[0].symbols, a[0].symbols);
    }
}

TEST(Corpus, SplitsAreDisjoint) {
    const CorpusSpec spec;
    const auto train = gen_corpus(spec, ToyTask::asr, 60, 3, Split::train);
    const auto eval = gen_corpus(spec, ToyTask::asr, 20, 3, Split::eval);
    std::set<std::string> ids;
    for (const auto& ex : train) {
        ids.insert(ex.id);
        EXPECT_EQ(split_of(ex.id, spec), Split::train);
    }
    for (const auto& ex : eval) {
        EXPECT_EQ(ids.count(ex.id), 0u);
        EXPECT_EQ(split_of(ex.id, spec), Split::eval);
    }
}

TEST(Corpus, UtteranceShape) {
    const CorpusSpec spec;
    for (const auto& ex : gen_corpus(spec, ToyTask::asr, 50, 5)) {
        EXPECT_GE(ex.symbols.size(), spec.min_symbols);
        EXPECT_LE(ex.symbols.size(), spec.max_symbols);
        EXPECT_EQ(ex.input.size(), ex.symbols.size() * 1600);
        for (std::size_t i = 0; i < ex.symbols.size(); ++i) {
            EXPECT_LT(ex.symbols[i], spec.alphabet);
            if (i > 0) {
                EXPECT_NE(ex.symbols[i], ex.symbols[i - 1]);
            }
        }
        double peak = 0.0;
        for (auto v : ex.input.samples) peak = std::max(peak, std::abs(v));
        EXPECT_LE(peak, 0.5 + 1e-12);
        EXPECT_EQ(ex.text, ex.symbols);
    }
}

TEST(Corpus, SeMixingHitsDrawnSnr) {
    const CorpusSpec spec;
    std::set<int> seen;
    for (const auto& ex : gen_corpus(spec, ToyTask::se, 40, 6)) {
        EXPECT_GE(ex.snr_db, 2.0);
        EXPECT_LE(ex.snr_db, 15.0);
        EXPECT_EQ(ex.snr_db, std::round(ex.snr_db));
        seen.insert(static_cast<int>(ex.snr_db));
        double signal = 0.0, noise = 0.0;
        for (std::size_t i = 0; i < ex.clean.size(); ++i) {
            signal += ex.clean.samples[i] * ex.clean.samples[i];
            const double n = ex.input.samples[i] - ex.clean.samples[i];
            noise += n * n;
        }
        EXPECT_NEAR(10.0 * std::log10(signal / noise), ex.snr_db, 0.5);
    }
    EXPECT_GT(seen.size(), 5u);
}

TEST(Corpus, PeakTranscriptionRecoversCleanTranscript) {
    const CorpusSpec spec;
    for (const auto& ex : gen_corpus(spec, ToyTask::asr, 10, 7)) {
        EXPECT_EQ(transcribe_by_peak(ex.input, spec), ex.symbols);
    }
}

TEST(Corpus, TranslationIsAPermutation) {
    const CorpusSpec spec;
    const auto pi = permutation(spec);
    EXPECT_EQ(std::set<std::size_t>(pi.begin(), pi.end()).size(), spec.alphabet);
    for (const auto& ex : gen_corpus(spec, ToyTask::s2tt, 10, 8)) {
        ASSERT_EQ(ex.text.size(), ex.symbols.size());
        for (std::size_t i = 0; i < ex.text.size(); ++i) EXPECT_EQ(ex.text[i], pi[ex.symbols[i]]);
    }
}

TEST(Corpus, TercileClasses) {
    const CorpusSpec spec;
    EXPECT_EQ(tercile_class({0, 1, 0, 1}, spec), 0);
    EXPECT_EQ(tercile_class({7, 8, 7, 8}, spec), 1);
    EXPECT_EQ(tercile_class({15, 14, 15, 14}, spec), 2);
    // Band edges at 1000 and 1500 Hz; an edge belongs to the band above it.
    EXPECT_EQ(tercile_class({3, 6}, spec), 0); // 950 Hz
    EXPECT_EQ(tercile_class({4, 6}, spec), 1); // 1000 Hz
    EXPECT_EQ(tercile_class({9, 10}, spec), 1); // 1450 Hz
    EXPECT_EQ(tercile_class({10, 0, 14}, spec), 1); // 1300 Hz
    for (const auto& ex : gen_corpus(spec, ToyTask::cls, 30, 9)) {
        EXPECT_EQ(ex.text, std::vector<std::size_t>{class_token(ex.label, spec)});
    }
    EXPECT_THROW(tercile_class({}, spec), Error);
}

TEST(Corpus, SpecValidation) {
    CorpusSpec spec;
    spec.base_hz = 7900.0;
    EXPECT_THROW(spec.validate(), ConfigError);
    EXPECT_THROW(gen_corpus(CorpusSpec{}, ToyTask::asr, 0, 1), Error);
    const CorpusSpec ok;
    EXPECT_LT(ok.frequency(ok.alphabet - 1), 8000.0);
}

TEST(Corpus, ManifestRoundTrip) {
    const CorpusSpec spec;
    const codec::CodecModel model(small_codec(), 1);
    auto corpus = gen_corpus(spec, ToyTask::se, 2, 1);
    auto cls = gen_corpus(spec, ToyTask::cls, 1, 1);
    corpus.insert(corpus.end(), cls.begin(), cls.end());
    const auto dir = temp_dir("manifest");
    const auto path = write_manifest(corpus, spec, dir, &model);
    const auto records = read_manifest(path);
    ASSERT_EQ(records.size(), 3u);
    EXPECT_EQ(records[0].id, corpus[0].id);
    EXPECT_EQ(records[0].task, "se");
    EXPECT_EQ(records[0].text, symbols_to_string(corpus[0].symbols, spec));
    EXPECT_EQ(dsp::read_wav(dir / records[0].wav_path).size(), corpus[0].input.size());
    EXPECT_EQ(codec::read_codes(dir / records[0].codes_path).groups, 4u);
    EXPECT_EQ(records[2].label, corpus[2].label);
    EXPECT_TRUE(records[2].codes_path.empty());
}

TEST(Metrics, EditDistanceKnownValues) {
    EXPECT_EQ(edit_distance({1, 2, 3}, {1, 2, 3}), 0u);
    EXPECT_EQ(edit_distance({}, {1, 2, 3, 4, 5}), 5u);
    EXPECT_EQ(edit_distance({1, 2, 3}, {2, 3, 4}), 2u);
    EXPECT_EQ(edit_distance({1, 2}, {2, 1}), 2u);
    EXPECT_EQ(token_error_rate({1, 2, 3}, {1, 2, 3}), 0.0);
    EXPECT_EQ(token_error_rate({}, {1, 2, 3, 4, 5}), 1.0);
}

TEST(Metrics, MatchesExhaustiveRecursion) {
    Rng rng(10);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto a = random_string(rng, 4, 3), b = random_string(rng, 4, 3);
        ASSERT_EQ(edit_distance(a, b), naive_edit(a, 0, b, 0));
    }
}

TEST(Metrics, MetricAxioms) {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const auto a = random_string(rng, 6, 4), b = random_string(rng, 6, 4), c = random_string(rng, 6, 4);
        EXPECT_EQ(edit_distance(a, a), 0u);
        EXPECT_EQ(edit_distance(a, b) == 0, a == b);
        EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
        EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    }
}

TEST(Metrics, RandomHypothesesNearChanceErrorRate) {
    Rng rng(12);
    const std::size_t S = 16;
    EditTally tally, oracle;
    for (int trial = 0; trial < 3000; ++trial) {
        std::vector<std::size_t> ref(4), hyp(4);
        for (auto& v : ref) v = rng.index(S);
        for (auto& v : hyp) v = rng.index(S);
        tally.add(hyp, ref);
        oracle.edits += naive_edit(hyp, 0, ref, 0);
        oracle.reference_tokens += ref.size();
    }
    EXPECT_EQ(tally.edits, oracle.edits);
    // Equal-length random strings over 16 symbols need nearly one edit per position.
    EXPECT_GT(tally.error_rate(), 0.8);
    EXPECT_LE(tally.error_rate(), 1.0);
    EXPECT_NEAR(tally.accuracy(), 1.0 - tally.error_rate(), 1e-15);
}

TEST(Chain, PlansAreWellTyped) {
    for (const auto& name : chain_plan_names()) EXPECT_NO_THROW(check_plan(chain_plan(name), lm::Modality::audio));
    EXPECT_THROW(check_plan(chain_plan("s2st"), lm::Modality::text), Error);
    const ChainPlan bad{"bad", {{lm::TaskId::asr, Source::raw}, {lm::TaskId::asr, Source::previous}}};
    EXPECT_THROW(check_plan(bad, lm::Modality::audio), Error);
    const ChainPlan dangling{"dangling", {{lm::TaskId::asr, Source::previous}}};
    EXPECT_THROW(check_plan(dangling, lm::Modality::audio), Error);
    try {
        chain_plan("s2s");
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_NE(std::string(e.what()).find("noise_robust_asr"), std::string::npos);
    }
}

namespace {

// Stand-in models built from the corpus definition.
TaskRunner oracle_runner(const CorpusSpec& spec, bool se_identity) {
    return [spec, se_identity](const ChainStep& step, const Artifact& in, const Artifact&) {
        const auto pi = permutation(spec);
        switch (step.task) {
        case lm::TaskId::asr: return Artifact::from_text(transcribe_by_peak(in.audio, spec));
        case lm::TaskId::s2tt: {
            std::vector<std::size_t> out;
            for (auto s : transcribe_by_peak(in.audio, spec)) out.push_back(pi[s]);
            return Artifact::from_text(out);
        }
        case lm::TaskId::tts: return Artifact::from_audio(render_tones(in.text, spec));
        case lm::TaskId::se:
            if (se_identity) return in;
            throw Error("no enhancement model");
        default: throw Error("unsupported task");
        }
    };
}

} // namespace

TEST(Chain, S2stComposesTranslationAndSynthesis) {
    const CorpusSpec spec;
    const auto ex = gen_corpus(spec, ToyTask::asr, 1, 13)[0];
    const auto r = chain_execute(chain_plan("s2st"), Artifact::from_audio(ex.input), oracle_runner(spec, true));
    ASSERT_EQ(r.steps.size(), 2u);
    const auto pi = permutation(spec);
    std::vector<std::size_t> translated;
    for (auto s : ex.symbols) translated.push_back(pi[s]);
    EXPECT_EQ(r.steps[0].output.text, translated);
    EXPECT_EQ(r.output.modality, lm::Modality::audio);
    EXPECT_EQ(transcribe_by_peak(r.output.audio, spec), translated);
}

TEST(Chain, IdentityEnhancementMatchesDirectAsr) {
    const CorpusSpec spec;
    const auto runner = oracle_runner(spec, true);
    for (const auto& ex : gen_corpus(spec, ToyTask::asr, 3, 14)) {
        const auto raw = Artifact::from_audio(ex.input);
        const auto chained = chain_execute(chain_plan("noise_robust_asr"), raw, runner);
        const auto direct = runner({lm::TaskId::asr}, raw, raw);
        EXPECT_EQ(chained.output.text, direct.text);
        EXPECT_EQ(chained.steps[0].output.audio.samples, ex.input.samples);
    }
}

TEST(Chain, FailureReportsStepIndex) {
    const CorpusSpec spec;
    const auto ex = gen_corpus(spec, ToyTask::asr, 1, 15)[0];
    try {
        chain_execute(chain_plan("noise_robust_asr"), Artifact::from_audio(ex.input), oracle_runner(spec, false));
        FAIL();
    } catch (const ChainError& e) {
        EXPECT_EQ(e.step(), 0u);
    }
    auto looping = [&](const ChainStep& step, const Artifact& in, const Artifact& raw) {
        Artifact out = oracle_runner(spec, true)(step, in, raw);
        out.diag.looped = step.task == lm::TaskId::tts;
        return out;
    };
    EXPECT_TRUE(chain_execute(chain_plan("s2st"), Artifact::from_audio(ex.input), looping).looped);
}

TEST(Pipeline, SequencesFollowTheTaskLayout) {
    const CorpusSpec spec;
    const codec::CodecModel model(small_codec(), 2);
    const Pipeline p(spec, model);
    EXPECT_EQ(p.vocab().size(), text_vocab_size(spec) + 16 + lm::kTaskCount);
    const auto asr = gen_corpus(spec, ToyTask::asr, 1, 16)[0];
    const auto seq = p.sequence(asr);
    EXPECT_EQ(seq.task, lm::TaskId::asr);
    EXPECT_EQ(seq.features.cols(), 240u);
    const auto m = seq.mask();
    EXPECT_EQ(static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)), asr.symbols.size() + 1);

    const auto tts = gen_corpus(spec, ToyTask::tts, 1, 17)[0];
    const auto t = p.sequence(tts);
    EXPECT_FALSE(t.audio_input());
    EXPECT_EQ(t.input_length, tts.text.size());
    EXPECT_EQ(t.target_length, tts.clean.size() / 640 + (tts.clean.size() % 640 ? 1 : 0));
    for (std::size_t i = 0; i < t.target_length; ++i) {
        EXPECT_EQ(p.vocab().classify(t.token_at(t.input_length + 2 + i)).kind, lm::TokenKind::audio);
    }

    const auto cls = gen_corpus(spec, ToyTask::cls, 1, 18)[0];
    EXPECT_EQ(p.sequence(cls).task, lm::TaskId::ser);
}

TEST(Pipeline, VocoderExamplesCarryConditions) {
    const CorpusSpec spec;
    const codec::CodecModel model(small_codec(), 3);
    const Pipeline p(spec, model);
    const auto se = gen_corpus(spec, ToyTask::se, 1, 19)[0];
    const auto ve = p.vocoder_example(se);
    EXPECT_EQ(ve.codes.active_groups, 4u);
    EXPECT_EQ(ve.cond.kind, vocoder::ConditionKind::se);
    EXPECT_EQ(ve.cond.features.rows(), ve.codes.frames);
    EXPECT_EQ(p.vocoder_example(se, false).cond.kind, vocoder::ConditionKind::none);
    const auto tts = gen_corpus(spec, ToyTask::tts, 1, 20)[0];
    EXPECT_EQ(p.vocoder_example(tts).cond.text, tts.text);
    EXPECT_THROW(p.vocoder_example(gen_corpus(spec, ToyTask::asr, 1, 21)[0]), Error);
}

TEST(Pipeline, EvaluateReportsLoopRatioAndDiagnostics) {
    const CorpusSpec spec;
    const codec::CodecModel model(small_codec(), 4);
    lm::LMConfig lc;
    lc.layers = 1;
    lc.width = 8;
    lc.heads = 2;
    lc.ff_dim = 16;
    lc.max_new_tokens = 6;
    lm::AudioEncoderConfig ec;
    ec.blocks = 1;
    ec.heads = 2;
    ec.ff_dim = 16;
    const lm::LanguageModel lm(toy_vocab(spec, model.config()), lc, ec, 5);
    vocoder::PredictorConfig pc;
    pc.layers = 1;
    pc.width = 8;
    pc.heads = 2;
    pc.ff_dim = 16;
    pc.feature_dim = 8;
    pc.text_tokens = text_vocab_size(spec);
    const vocoder::Predictor predictor(pc, model.codebooks(), 6);
    const Pipeline p(spec, model, &lm, &predictor);
    for (ToyTask t : {ToyTask::asr, ToyTask::cls, ToyTask::se, ToyTask::tts}) {
        const auto eval = gen_corpus(spec, t, 2, 22, Split::eval);
        const auto r = evaluate(t, p, eval);
        EXPECT_TRUE(r.contains("loop_ratio")) << toy_task_name(t);
        EXPECT_EQ(r.at("clips").size(), 2u);
        EXPECT_EQ(r.at("count"), 2);
        if (t == ToyTask::se || t == ToyTask::tts) {
            EXPECT_TRUE(r.contains("logmel_dist"));
        } else {
            EXPECT_TRUE(r.contains("token_acc"));
        }
    }
    EXPECT_THROW(evaluate(ToyTask::asr, p, {}), Error);
    const auto noisy = gen_corpus(spec, ToyTask::se, 2, 23, Split::eval);
    const auto plan = chain_plan("noise_robust_asr");
    const auto chained = evaluate_transcripts(p, noisy, &plan);
    EXPECT_EQ(chained.at("task"), "noise_robust_asr");
    EXPECT_TRUE(chained.contains("loop_ratio"));
}

TEST(Harness, TrainingIsReproducible) {
    const CorpusSpec spec;
    const auto clips = codec_clips(spec, 3, 1);
    EXPECT_EQ(clips[0].size(), 16000u);
    auto run = [&] {
        codec::CodecModel model(small_codec(), 7);
        CodecSchedule s;
        s.steps = 3;
        s.batch = 2;
        s.init_clips = 3;
        return train_codec(model, clips, s).losses;
    };
    const auto a = run();
    EXPECT_EQ(a.size(), 3u);
    EXPECT_EQ(a, run());
}

TEST(Harness, LmAveragesTheLastIterates) {
    const CorpusSpec spec;
    const codec::CodecModel codec_model(small_codec(), 8);
    const Pipeline p(spec, codec_model);
    std::vector<lm::UnifiedSequence> data;
    for (const auto& ex : gen_corpus(spec, ToyTask::asr, 4, 3)) data.push_back(p.sequence(ex));
    lm::LMConfig lc;
    lc.layers = 1;
    lc.width = 8;
    lc.heads = 2;
    lc.ff_dim = 16;
    lm::AudioEncoderConfig ec;
    ec.blocks = 1;
    ec.heads = 2;
    ec.ff_dim = 16;
    auto run = [&](std::size_t steps, std::size_t average_last) {
        lm::LanguageModel model(toy_vocab(spec, codec_model.config()), lc, ec, 9);
        LmSchedule s;
        s.steps = steps;
        s.batch = 2;
        s.average_last = average_last;
        train_lm(model, data, s);
        return model.params().tensors();
    };
    const auto w2 = run(2, 0), w3 = run(3, 0), avg = run(3, 2);
    EXPECT_EQ(run(3, 1), w3);
    EXPECT_NE(avg, w3);
    for (const auto& [name, value] : avg) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            EXPECT_NEAR(value[i], 0.5 * (w2.at(name)[i] + w3.at(name)[i]), 1e-12) << name;
        }
    }
}
