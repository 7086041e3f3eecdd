#pragma once

#include "lgpt/lm/vocab.hpp"
#include "lgpt/numerics/graph.hpp"
#include "lgpt/numerics/ops.hpp"
#include "lgpt/numerics/optimizer.hpp"
#include "lgpt/numerics/random.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lgpt::lm {

enum class Norm : std::uint8_t { layer, batch };

struct AudioEncoderConfig {
    std::size_t blocks = 2;
    std::size_t input_dim = 240; // mel bins x LFR factor
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
    std::size_t conv_kernel = 5;
    Norm norm = Norm::layer;
};

enum class Sampling : std::uint8_t { greedy, top_k };

struct LMConfig {
    std::size_t layers = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t ff_dim = 256;
    std::size_t max_length = 2048;
    std::size_t max_new_tokens = 512;
    Sampling sampling = Sampling::greedy;
    std::size_t top_k = 5;
    std::uint64_t sampling_seed = 0;

    void validate() const;
};

// Sinusoidal encodings [rows, dim]; row r encodes position r.
Tensor sinusoidal_positions(std::size_t rows, std::size_t dim);

class LanguageModel {
public:
    LanguageModel(UnifiedVocab vocab, LMConfig config, AudioEncoderConfig encoder, std::uint64_t seed = 0);

    const UnifiedVocab& vocab() const { return vocab_; }
    const LMConfig& config() const { return config_; }
    const AudioEncoderConfig& encoder_config() const { return encoder_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    // Conformer-style encoder on packed LFR rows [T, F]; segments separate utterances.
    Var audio_encode(Graph& g, Var features, const Segments& segments = {}) const;
    // Input rows [T, D] for a batch of sequences packed end to end.
    Var embed_inputs(Graph& g, const std::vector<const UnifiedSequence*>& batch, Segments& segments) const;
    // Causal transformer over packed input rows; returns final hidden states [T, D].
    Var backbone(Graph& g, Var inputs, const Segments& segments) const;
    // Hidden states -> logits over the unified vocabulary (tied with the input embedding).
    Var project(Graph& g, Var hidden) const;

    // [T, N + M + L] logits for one sequence.
    Var forward(Graph& g, const UnifiedSequence& seq) const;
    Tensor logits(const UnifiedSequence& seq) const;

    // Batch loss: per-sequence masked mean of the cross-entropy, averaged over the batch.
    Var loss(Graph& g, const std::vector<const UnifiedSequence*>& batch) const;

    // Logits of the next token after the sequence's last position.
    std::vector<double> next_logits(const UnifiedSequence& seq) const;

private:
    Var norm(Graph& g, Var x, const std::string& name, Norm kind) const;
    Var self_attention(Graph& g, Var x, const std::string& name, std::size_t heads, bool causal,
                       const Segments& segments) const;
    Var feed_forward(Graph& g, Var x, const std::string& name) const;

    UnifiedVocab vocab_;
    LMConfig config_;
    AudioEncoderConfig encoder_;
    ParameterStore params_;
};

// Mean over masked positions of -log p(label); labels < 0 are skipped. Throws on an all-zero mask.
Var masked_ce(Var logits, const std::vector<std::int64_t>& labels);
double masked_ce(const Tensor& logits, const UnifiedSequence& seq);

enum class StopReason : std::uint8_t { eos, cap };

struct DecodeDiag {
    std::size_t length = 0;
    StopReason stop = StopReason::eos;
    bool looped = false;
};

struct DecodeResult {
    std::vector<std::size_t> tokens; // generated ids, <E> excluded
    DecodeDiag diag;
};

struct DecodeOptions {
    std::size_t max_new_tokens = 512;
    Sampling sampling = Sampling::greedy;
    std::size_t top_k = 5;
    std::uint64_t seed = 0;
    // Candidate ids [lo, hi) besides the end token; empty range means every id.
    std::size_t allowed_lo = 0;
    std::size_t allowed_hi = 0;
};

// Maps the sequence so far to next-token logits.
using Scorer = std::function<std::vector<double>(const UnifiedSequence&)>;

DecodeResult decode_autoregressive(const UnifiedSequence& prefix, const Scorer& scorer, std::size_t end_token,
                                   std::size_t max_length, const DecodeOptions& options);
// Decoding with the model, restricted to the task's output range.
DecodeResult decode(const LanguageModel& model, const UnifiedSequence& prefix);

// True when some 4-gram occurs at least 8 times back to back.
bool has_loop(const std::vector<std::size_t>& tokens, std::size_t gram = 4, std::size_t repeats = 8);
double loop_ratio(const std::vector<DecodeDiag>& diags);

struct LmStepReport {
    std::size_t step = 0;
    double loss = 0.0;
};

class LmTrainer {
public:
    LmTrainer(LanguageModel& model, AdamConfig adam) : model_(model), adam_(adam) {}

    LmStepReport step(const std::vector<const UnifiedSequence*>& batch);
    double measure(const std::vector<const UnifiedSequence*>& batch) const;

    Adam& optimizer() { return adam_; }

private:
    LanguageModel& model_;
    Adam adam_;
};

} // namespace lgpt::lm
