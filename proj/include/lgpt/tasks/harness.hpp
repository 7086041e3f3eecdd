#pragma once

#include "lgpt/codec/codec.hpp"
#include "lgpt/lm/model.hpp"
#include "lgpt/tasks/corpus.hpp"
#include "lgpt/vocoder/vocoder.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

// Seeded training loops shared by the command line and the acceptance suite.
namespace lgpt::tasks {

struct TrainLog {
    std::vector<double> losses; // one per step
    double initial = 0.0;       // measured before the first step
    double final = 0.0;         // measured after the last step
};

using Progress = std::function<void(std::size_t step, double loss)>;

struct CodecSchedule {
    std::size_t steps = 2000;
    std::size_t batch = 4;
    std::size_t init_clips = 100; // clips whose latents seed the codebooks
    std::size_t probe_clips = 4;  // clips measured before and after training
    bool init_codebooks = true;   // false keeps the model's codebooks, e.g. when resuming
    AdamConfig adam{2e-3, 100};
    std::uint64_t seed = 1;
};

// One-second clips: ten tones each.
std::vector<dsp::Waveform> codec_clips(const CorpusSpec& spec, std::size_t count, std::uint64_t seed,
                                       Split split = Split::train);
TrainLog train_codec(codec::CodecModel& model, const std::vector<dsp::Waveform>& clips, const CodecSchedule& schedule,
                     const Progress& progress = {});

struct LmSchedule {
    std::size_t steps = 10000;
    std::size_t batch = 16;
    AdamConfig adam{2e-3, 200};
    std::uint64_t seed = 1;
    // From this step on, batches draw only from the refresh tasks.
    std::size_t refresh_start = SIZE_MAX;
    std::set<lm::TaskId> refresh_tasks;
    // The trained model is the mean of the weights after each of the last
    // average_last steps; 0 keeps the final weights.
    std::size_t average_last = 2000;
};

TrainLog train_lm(lm::LanguageModel& model, const std::vector<lm::UnifiedSequence>& data, const LmSchedule& schedule,
                  const Progress& progress = {});

struct VocoderSchedule {
    std::size_t steps = 2000;
    std::size_t batch = 8;
    AdamConfig adam{1e-3, 100};
    std::uint64_t seed = 1;
};

// initial/final are the mean l_pre over the whole training set.
TrainLog train_vocoder(vocoder::Predictor& predictor, const codec::Codebooks& books,
                       const std::vector<vocoder::VocoderExample>& data, const VocoderSchedule& schedule,
                       const Progress& progress = {});
TrainLog train_multistep(vocoder::MultistepBaseline& model, const std::vector<vocoder::VocoderExample>& data,
                         const VocoderSchedule& schedule, const Progress& progress = {});

} // namespace lgpt::tasks
