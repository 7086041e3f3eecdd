#pragma once

#include "lgpt/codec/codec.hpp"
#include "lgpt/error.hpp"
#include "lgpt/lm/model.hpp"
#include "lgpt/tasks/corpus.hpp"
#include "lgpt/vocoder/vocoder.hpp"

#include <json.hpp>

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace lgpt::tasks {

// A value flowing between tasks: audio (with the first-group codes it was
// synthesized from, if any) or text tokens.
struct Artifact {
    lm::Modality modality = lm::Modality::audio;
    dsp::Waveform audio;
    std::vector<std::size_t> codes;
    std::vector<std::size_t> text;
    lm::DecodeDiag diag;

    static Artifact from_audio(dsp::Waveform w);
    static Artifact from_text(std::vector<std::size_t> tokens);
};

// Toy vocabulary: corpus text tokens plus the codec's first-group codes.
lm::UnifiedVocab toy_vocab(const CorpusSpec& spec, const codec::CodecConfig& codec);
// LM front end matching the default audio encoder input (40 mel bins x 6).
dsp::FrontendConfig toy_frontend();

// Binds the corpus to trained models. The LM and predictor are optional for
// the conversions that do not need them.
class Pipeline {
public:
    Pipeline(CorpusSpec spec, const codec::CodecModel& codec, const lm::LanguageModel* lm = nullptr,
             const vocoder::Predictor* predictor = nullptr);

    const CorpusSpec& spec() const { return spec_; }
    const lm::UnifiedVocab& vocab() const { return vocab_; }
    const codec::CodecModel& codec() const { return codec_; }

    Tensor features(const dsp::Waveform& w) const;
    std::vector<std::size_t> first_group(const dsp::Waveform& w) const;
    // Teacher-forcing sequence for one example.
    lm::UnifiedSequence sequence(const Example& ex) const;
    // Vocoder training pair for an SE or TTS example; `conditioned` false drops the condition.
    vocoder::VocoderExample vocoder_example(const Example& ex, bool conditioned = true) const;

    // Runs one task with the LM. Audio outputs are synthesized by the vocoder;
    // a prompt adds the prompt audio's codec embeddings to a TTS condition.
    Artifact run(lm::TaskId task, const Artifact& input, const Artifact* prompt = nullptr) const;

private:
    const lm::LanguageModel& lm() const;
    const vocoder::Predictor& predictor() const;

    CorpusSpec spec_;
    const codec::CodecModel& codec_;
    const lm::LanguageModel* lm_;
    const vocoder::Predictor* predictor_;
    lm::UnifiedVocab vocab_;
    dsp::FrontendConfig frontend_;
};

enum class Source : std::uint8_t { raw, previous };

struct ChainStep {
    lm::TaskId task = lm::TaskId::asr;
    Source source = Source::raw;
    bool prompt_from_raw = false;
};

struct ChainPlan {
    std::string name;
    std::vector<ChainStep> steps;
};

const std::vector<std::string>& chain_plan_names();
// Throws UsageError listing the valid names.
ChainPlan chain_plan(const std::string& name);
// Throws Error when a step's input modality does not match what feeds it.
void check_plan(const ChainPlan& plan, lm::Modality raw);

class ChainError : public Error {
public:
    ChainError(std::size_t step, const std::string& what);
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

struct StepRecord {
    std::size_t index = 0;
    lm::TaskId task = lm::TaskId::asr;
    Artifact input;
    Artifact output;
};

struct ChainResult {
    Artifact output;
    std::vector<StepRecord> steps;
    bool looped = false;
};

using TaskRunner = std::function<Artifact(const ChainStep& step, const Artifact& input, const Artifact& raw)>;
TaskRunner model_runner(const Pipeline& pipeline);

// Type-checks the plan, then runs its steps in order. A failing step raises ChainError.
ChainResult chain_execute(const ChainPlan& plan, const Artifact& raw, const TaskRunner& runner);

// Metrics record with per-clip diagnostics. Text tasks report token_acc and
// error_rate (cls also accuracy); audio tasks report logmel_dist, snr_db and
// first-group code accuracy. Every record carries loop_ratio.
nlohmann::json evaluate(ToyTask task, const Pipeline& pipeline, const std::vector<Example>& eval_set);
// ASR transcripts of the examples' audio inputs against their symbols; with a
// plan, the plan's final text output is scored instead.
nlohmann::json evaluate_transcripts(const Pipeline& pipeline, const std::vector<Example>& eval_set,
                                    const ChainPlan* plan = nullptr);

} // namespace lgpt::tasks
