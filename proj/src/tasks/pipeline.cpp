#include "lgpt/tasks/pipeline.hpp"

#include "lgpt/error.hpp"
#include "lgpt/tasks/metrics.hpp"

namespace lgpt::tasks {

Artifact Artifact::from_audio(dsp::Waveform w) {
    Artifact a;
    a.modality = lm::Modality::audio;
    a.audio = std::move(w);
    return a;
}

Artifact Artifact::from_text(std::vector<std::size_t> tokens) {
    Artifact a;
    a.modality = lm::Modality::text;
    a.text = std::move(tokens);
    return a;
}

lm::UnifiedVocab toy_vocab(const CorpusSpec& spec, const codec::CodecConfig& codec) {
    return lm::UnifiedVocab(codec.codebook_size, text_vocab_size(spec));
}

dsp::FrontendConfig toy_frontend() { return dsp::FrontendConfig{}; }

Pipeline::Pipeline(CorpusSpec spec, const codec::CodecModel& codec, const lm::LanguageModel* lm,
                   const vocoder::Predictor* predictor)
    : spec_(spec), codec_(codec), lm_(lm), predictor_(predictor), vocab_(toy_vocab(spec, codec.config())),
      frontend_(toy_frontend()) {
    spec_.validate();
    if (lm_ && lm_->vocab().size() != vocab_.size()) {
        throw ConfigError("language model vocabulary of " + std::to_string(lm_->vocab().size()) +
                          " does not match the toy vocabulary of " + std::to_string(vocab_.size()));
    }
}

const lm::LanguageModel& Pipeline::lm() const {
    if (!lm_) throw Error("this pipeline has no language model");
    return *lm_;
}

const vocoder::Predictor& Pipeline::predictor() const {
    if (!predictor_) throw Error("this pipeline has no vocoder predictor");
    return *predictor_;
}

Tensor Pipeline::features(const dsp::Waveform& w) const {
    if (w.empty()) throw Error("cannot extract features from empty audio");
    return dsp::lfr_features(w, frontend_).frames;
}

std::vector<std::size_t> Pipeline::first_group(const dsp::Waveform& w) const {
    return codec_.encode_codes(w, 1).column(0);
}

lm::UnifiedSequence Pipeline::sequence(const Example& ex) const {
    const lm::TaskId id = task_token(ex.task);
    switch (ex.task) {
    case ToyTask::se: return lm::build_sequence(vocab_, id, features(ex.input), vocab_.encode_audio(first_group(ex.clean)));
    case ToyTask::tts: return lm::build_sequence(vocab_, id, ex.text, vocab_.encode_audio(first_group(ex.clean)));
    default: return lm::build_sequence(vocab_, id, features(ex.input), ex.text);
    }
}

vocoder::VocoderExample Pipeline::vocoder_example(const Example& ex, bool conditioned) const {
    if (ex.task != ToyTask::se && ex.task != ToyTask::tts) throw Error("vocoder examples come from SE or TTS data");
    vocoder::VocoderExample out;
    out.codes = codec_.encode_codes(ex.clean, codec_.config().num_quantizers);
    if (conditioned) {
        out.cond = ex.task == ToyTask::tts ? vocoder::ConditionBundle::tts(ex.text)
                                           : vocoder::ConditionBundle::se(vocoder::se_condition_features(codec_, ex.input));
    }
    return out;
}

Artifact Pipeline::run(lm::TaskId task, const Artifact& input, const Artifact* prompt) const {
    const lm::TaskSpec& ts = lm::task_spec(task);
    if (input.modality != ts.input) {
        throw Error(std::string(lm::task_name(task)) + " expects " +
                    (ts.input == lm::Modality::audio ? "audio" : "text") + " input");
    }
    const lm::UnifiedSequence seq = ts.input == lm::Modality::audio
                                        ? lm::build_sequence(vocab_, task, features(input.audio), {})
                                        : lm::build_sequence(vocab_, task, input.text, {});
    const lm::DecodeResult result = lm::decode(lm(), seq.prefix());
    if (ts.output == lm::Modality::text) {
        Artifact out = Artifact::from_text(result.tokens);
        out.diag = result.diag;
        return out;
    }
    std::vector<std::size_t> codes = vocab_.decode_audio(result.tokens);
    if (codes.empty()) throw Error(std::string(lm::task_name(task)) + " decoded no audio tokens");
    vocoder::ConditionBundle cond;
    if (task == lm::TaskId::tts) {
        Tensor prompt_embedding;
        if (prompt) {
            const auto pc = codec_.encode_codes(prompt->audio, codec_.config().num_quantizers);
            prompt_embedding = vocoder::target_sum_embedding(pc, codec_.codebooks());
        }
        cond = vocoder::ConditionBundle::tts(input.text, std::move(prompt_embedding));
    } else {
        cond = vocoder::ConditionBundle::se(vocoder::se_condition_features(codec_, input.audio));
    }
    Artifact out = Artifact::from_audio(vocoder::synthesize(codes, cond, codec_, predictor()));
    out.codes = std::move(codes);
    out.diag = result.diag;
    return out;
}

const std::vector<std::string>& chain_plan_names() {
    static const std::vector<std::string> names{"s2st", "noise_robust_asr", "personalized_tts"};
    return names;
}

ChainPlan chain_plan(const std::string& name) {
    using lm::TaskId;
    if (name == "s2st") return {name, {{TaskId::s2tt, Source::raw}, {TaskId::tts, Source::previous}}};
    if (name == "noise_robust_asr") return {name, {{TaskId::se, Source::raw}, {TaskId::asr, Source::previous}}};
    if (name == "personalized_tts") {
        return {name, {{TaskId::asr, Source::raw}, {TaskId::s2tt, Source::raw}, {TaskId::tts, Source::previous, true}}};
    }
    std::string valid;
    for (const auto& n : chain_plan_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw UsageError("unknown plan '" + name + "'; valid plans: " + valid);
}

void check_plan(const ChainPlan& plan, lm::Modality raw) {
    if (plan.steps.empty()) throw Error("plan '" + plan.name + "' has no steps");
    auto label = [](lm::Modality m) { return m == lm::Modality::audio ? "audio" : "text"; };
    lm::Modality previous = raw;
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const auto& step = plan.steps[i];
        const lm::TaskSpec& ts = lm::task_spec(step.task);
        if (step.source == Source::previous && i == 0) throw Error("step 0 of plan '" + plan.name + "' has no previous output");
        const lm::Modality in = step.source == Source::raw ? raw : previous;
        if (in != ts.input) {
            throw Error("plan '" + plan.name + "' step " + std::to_string(i) + ": " + std::string(lm::task_name(step.task)) +
                        " takes " + label(ts.input) + " but receives " + label(in));
        }
        if (step.prompt_from_raw && (step.task != lm::TaskId::tts || raw != lm::Modality::audio)) {
            throw Error("plan '" + plan.name + "' step " + std::to_string(i) + ": only TTS takes an audio prompt");
        }
        previous = ts.output;
    }
}

ChainError::ChainError(std::size_t step, const std::string& what)
    : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

TaskRunner model_runner(const Pipeline& pipeline) {
    return [&pipeline](const ChainStep& step, const Artifact& input, const Artifact& raw) {
        return pipeline.run(step.task, input, step.prompt_from_raw ? &raw : nullptr);
    };
}

ChainResult chain_execute(const ChainPlan& plan, const Artifact& raw, const TaskRunner& runner) {
    check_plan(plan, raw.modality);
    ChainResult result;
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const ChainStep& step = plan.steps[i];
        StepRecord rec;
        rec.index = i;
        rec.task = step.task;
        rec.input = step.source == Source::raw ? raw : result.steps.back().output;
        try {
            rec.output = runner(step, rec.input, raw);
        } catch (const std::exception& e) {
            throw ChainError(i, std::string(lm::task_name(step.task)) + " failed: " + e.what());
        }
        if (rec.output.modality != lm::task_spec(step.task).output) {
            throw ChainError(i, std::string(lm::task_name(step.task)) + " produced the wrong modality");
        }
        result.looped = result.looped || rec.output.diag.looped;
        result.steps.push_back(std::move(rec));
    }
    result.output = result.steps.back().output;
    return result;
}

namespace {

nlohmann::json diag_json(const lm::DecodeDiag& d) {
    return {{"length", d.length}, {"stop", d.stop == lm::StopReason::eos ? "eos" : "cap"}, {"looped", d.looped}};
}

} // namespace

nlohmann::json evaluate(ToyTask task, const Pipeline& pipeline, const std::vector<Example>& eval_set) {
    if (eval_set.empty()) throw Error("empty eval set");
    const lm::TaskId id = task_token(task);
    const bool audio_out = lm::task_spec(id).output == lm::Modality::audio;
    nlohmann::json clips = nlohmann::json::array();
    std::vector<lm::DecodeDiag> diags;
    EditTally tally;
    std::size_t correct = 0;
    double logmel = 0.0, snr = 0.0;
    for (const auto& ex : eval_set) {
        if (ex.task != task) throw Error("example " + ex.id + " does not belong to task " + toy_task_name(task));
        const Artifact input = task == ToyTask::tts ? Artifact::from_text(ex.text) : Artifact::from_audio(ex.input);
        const Artifact out = pipeline.run(id, input);
        diags.push_back(out.diag);
        nlohmann::json clip{{"clip_id", ex.id}, {"decode", diag_json(out.diag)}};
        if (audio_out) {
            const auto ref_codes = pipeline.first_group(ex.clean);
            tally.add(out.codes, ref_codes);
            const double d = dsp::log_mel_distance(ex.clean, out.audio);
            const double s = dsp::snr_db(ex.clean.samples, out.audio.samples);
            logmel += d;
            snr += s;
            clip["logmel_dist"] = d;
            clip["snr_db"] = s;
            clip["code_error_rate"] = token_error_rate(out.codes, ref_codes);
        } else {
            tally.add(out.text, ex.text);
            correct += out.text == ex.text ? 1 : 0;
            clip["error_rate"] = token_error_rate(out.text, ex.text);
            clip["hypothesis"] = symbols_to_string(out.text, pipeline.spec());
            clip["reference"] = symbols_to_string(ex.text, pipeline.spec());
        }
        clips.push_back(std::move(clip));
    }
    const auto n = static_cast<double>(eval_set.size());
    nlohmann::json rec{{"task", toy_task_name(task)}, {"count", eval_set.size()}, {"loop_ratio", lm::loop_ratio(diags)}};
    if (audio_out) {
        rec["logmel_dist"] = logmel / n;
        rec["snr_db"] = snr / n;
        rec["code_accuracy"] = tally.accuracy();
    } else {
        rec["token_acc"] = tally.accuracy();
        rec["error_rate"] = tally.error_rate();
        if (task == ToyTask::cls) rec["accuracy"] = static_cast<double>(correct) / n;
    }
    rec["clips"] = std::move(clips);
    return rec;
}

nlohmann::json evaluate_transcripts(const Pipeline& pipeline, const std::vector<Example>& eval_set,
                                    const ChainPlan* plan) {
    if (eval_set.empty()) throw Error("empty eval set");
    if (plan && lm::task_spec(plan->steps.back().task).output != lm::Modality::text) {
        throw Error("plan '" + plan->name + "' does not end in text");
    }
    const TaskRunner runner = model_runner(pipeline);
    nlohmann::json clips = nlohmann::json::array();
    std::vector<lm::DecodeDiag> diags;
    EditTally tally;
    for (const auto& ex : eval_set) {
        if (ex.input.empty()) throw Error("example " + ex.id + " has no audio input");
        Artifact out;
        if (plan) {
            const ChainResult r = chain_execute(*plan, Artifact::from_audio(ex.input), runner);
            out = r.output;
            out.diag.looped = r.looped;
        } else {
            out = pipeline.run(lm::TaskId::asr, Artifact::from_audio(ex.input));
        }
        diags.push_back(out.diag);
        tally.add(out.text, ex.symbols);
        clips.push_back({{"clip_id", ex.id},
                         {"error_rate", token_error_rate(out.text, ex.symbols)},
                         {"decode", diag_json(out.diag)}});
    }
    return {{"task", plan ? plan->name : "asr"},
            {"count", eval_set.size()},
            {"token_acc", tally.accuracy()},
            {"error_rate", tally.error_rate()},
            {"loop_ratio", lm::loop_ratio(diags)},
            {"clips", std::move(clips)}};
}

} // namespace lgpt::tasks
