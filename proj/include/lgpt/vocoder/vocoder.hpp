#pragma once

#include "lgpt/codec/codec.hpp"
#include "lgpt/dsp/audio.hpp"
#include "lgpt/numerics/graph.hpp"
#include "lgpt/numerics/ops.hpp"
#include "lgpt/numerics/optimizer.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace lgpt::vocoder {

enum class ConditionKind : std::uint8_t { none, tts, se };

// Raw conditioning inputs; the predictor projects them to a [T_c, width] payload.
struct ConditionBundle {
    ConditionKind kind = ConditionKind::none;
    std::vector<std::size_t> text; // tts: text token ids
    Tensor prompt;                 // tts, optional: prompt-audio codec embeddings [T_p, codec latent dim]
    Tensor features;               // se: noisy-speech features [T_c, feature_dim]

    static ConditionBundle none() { return {}; }
    static ConditionBundle tts(std::vector<std::size_t> text, Tensor prompt = {});
    static ConditionBundle se(Tensor features);
    std::size_t rows() const;
};

// Codec encoder latents of the noisy input, one row per codec frame [T, latent dim].
Tensor se_condition_features(const codec::CodecModel& codec, const dsp::Waveform& noisy);

struct PredictorConfig {
    std::size_t layers = 2;
    std::size_t width = 64; // must equal the codec latent dimension
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
    std::size_t text_tokens = 258;
    std::size_t feature_dim = 64; // SE condition width, the codec latent dimension
    std::size_t max_rows = 1024;

    void validate() const;
};

// Bidirectional transformer over [condition payload, first-group codeword embeddings]
// that regresses the summed codec embedding of every frame.
class Predictor {
public:
    // Keeps a frozen copy of the first-stage codebook of the codec.
    Predictor(PredictorConfig config, const codec::Codebooks& books, std::uint64_t seed = 0);

    const PredictorConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    Var payload(Graph& g, const ConditionBundle& cond) const; // [T_c, width]; T_c may be 0
    // [T, width] estimate; builds exactly one predictor pass.
    Var predict(Graph& g, const std::vector<std::size_t>& first_group, const ConditionBundle& cond) const;
    Tensor predict_sum_embedding(const std::vector<std::size_t>& first_group, const ConditionBundle& cond) const;

    // Number of predictor passes built so far.
    std::size_t passes() const { return passes_.load(); }

private:
    PredictorConfig config_;
    Tensor first_stage_; // [K, D]
    ParameterStore params_;
    mutable std::atomic<std::size_t> passes_{0};
};

// Sum over frames and dimensions of |d| + d^2 with d = E - estimate.
Var l_pre(Var target, Var estimate);
double l_pre(const Tensor& target, const Tensor& estimate);

// Maps first-group codes and a condition to a [T, D] sum-embedding estimate.
using SumEstimator = std::function<Tensor(const std::vector<std::size_t>&, const ConditionBundle&)>;

dsp::Waveform synthesize(const std::vector<std::size_t>& first_group, const ConditionBundle& cond,
                         const codec::CodecModel& codec, const SumEstimator& estimator);
dsp::Waveform synthesize(const std::vector<std::size_t>& first_group, const ConditionBundle& cond,
                         const codec::CodecModel& codec, const Predictor& predictor);

// Ground truth for a full code matrix: every group's codewords summed.
Tensor target_sum_embedding(const codec::CodeFrameSeq& codes, const codec::Codebooks& books);

struct MultistepConfig {
    std::size_t layers = 2;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
    std::size_t max_rows = 1024;
};

// Group-by-group classifier: predicts the indices of group g from the summed
// codewords of groups < g, scoring against group g's frozen codebook.
class MultistepBaseline {
public:
    MultistepBaseline(MultistepConfig config, const codec::Codebooks& books, std::uint64_t seed = 0);

    const MultistepConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    // [T, K] logits for group `group` (>= 1) given the preceding groups of codes.
    Var logits(Graph& g, const codec::CodeFrameSeq& codes, std::size_t group) const;
    // Fills groups 1..Q-1 greedily, one pass per group.
    codec::CodeFrameSeq complete(const std::vector<std::size_t>& first_group) const;
    dsp::Waveform synthesize(const std::vector<std::size_t>& first_group, const codec::CodecModel& codec) const;

    std::size_t passes() const { return passes_.load(); }

private:
    MultistepConfig config_;
    codec::Codebooks books_;
    ParameterStore params_;
    mutable std::atomic<std::size_t> passes_{0};
};

// Baseline config whose feed-forward width brings its parameter count closest to the predictor's.
MultistepConfig matched_multistep(const PredictorConfig& predictor, const codec::Codebooks& books);

// One training pair: full codes of the reference audio plus its condition.
struct VocoderExample {
    codec::CodeFrameSeq codes;
    ConditionBundle cond;
};

struct VocoderStepReport {
    std::size_t step = 0;
    double loss = 0.0;
};

// Adam on the predictor only; the loss is the batch mean of l_pre.
class VocoderTrainer {
public:
    VocoderTrainer(Predictor& predictor, const codec::Codebooks& books, AdamConfig adam);

    VocoderStepReport step(const std::vector<const VocoderExample*>& batch);
    double measure(const std::vector<const VocoderExample*>& batch) const;

private:
    Var batch_loss(Graph& g, const std::vector<const VocoderExample*>& batch) const;

    Predictor& predictor_;
    const codec::Codebooks& books_;
    Adam adam_;
};

// Teacher-forced cross-entropy on one random group per example.
class MultistepTrainer {
public:
    MultistepTrainer(MultistepBaseline& model, AdamConfig adam, std::uint64_t seed);

    VocoderStepReport step(const std::vector<const VocoderExample*>& batch);

private:
    MultistepBaseline& model_;
    Adam adam_;
    Rng rng_;
};

} // namespace lgpt::vocoder
