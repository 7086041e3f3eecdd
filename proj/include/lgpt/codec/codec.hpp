#pragma once

#include "lgpt/dsp/audio.hpp"
#include "lgpt/numerics/graph.hpp"
#include "lgpt/numerics/optimizer.hpp"
#include "lgpt/numerics/random.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lgpt::codec {

struct CodecConfig {
    std::vector<std::size_t> strides{8, 5, 4, 2, 2};
    // Width of the input convolution followed by the output width of each strided block.
    std::vector<std::size_t> channels{8, 16, 32, 32, 64, 64};
    std::size_t latent_dim = 64;
    std::size_t num_quantizers = 32;
    std::size_t codebook_size = 1024;
    int sample_rate = dsp::kSampleRate;

    double commitment = 0.25;
    std::vector<std::size_t> spectral_windows{512, 128};
    double ema_decay = 0.99;
    std::size_t dead_code_steps = 200;

    std::size_t hop() const;                  // product of strides
    double token_rate() const;                // frames per second
    void validate() const;                    // throws ConfigError
};

// Number of latent frames for n samples: ceil(n / hop).
std::size_t frame_count(std::size_t samples, const CodecConfig& config);

// T x Q code indices, row-major. Only the first active_groups columns are meaningful.
struct CodeFrameSeq {
    std::size_t frames = 0;
    std::size_t groups = 0;
    std::size_t active_groups = 0;
    std::vector<std::uint16_t> indices;

    CodeFrameSeq() = default;
    CodeFrameSeq(std::size_t frames, std::size_t groups, std::size_t active);

    std::uint16_t& at(std::size_t t, std::size_t g) { return indices[t * groups + g]; }
    std::uint16_t at(std::size_t t, std::size_t g) const { return indices[t * groups + g]; }
    std::vector<std::size_t> column(std::size_t g) const;
    // Copy holding only the first n groups.
    CodeFrameSeq truncated(std::size_t n) const;

    bool operator==(const CodeFrameSeq&) const = default;
};

// Q x K x D codebooks with entry 0 of every stage fixed at zero.
class Codebooks {
public:
    Codebooks() = default;
    Codebooks(std::size_t stages, std::size_t size, std::size_t dim);

    std::size_t stages() const { return stages_; }
    std::size_t size() const { return size_; }
    std::size_t dim() const { return dim_; }

    const double* entry(std::size_t stage, std::size_t k) const { return &values_[(stage * size_ + k) * dim_]; }
    double* entry(std::size_t stage, std::size_t k) { return &values_[(stage * size_ + k) * dim_]; }
    // Writes entry k (k > 0) of a stage.
    void set(std::size_t stage, std::size_t k, const double* values);

    Tensor tensor() const; // [Q, K, D]
    static Codebooks from_tensor(const Tensor& t);

    bool operator==(const Codebooks&) const = default;

private:
    std::size_t stages_ = 0;
    std::size_t size_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> values_;
};

// Squared Euclidean distance, stopping early once the running sum exceeds bound.
double squared_distance(const double* a, const double* b, std::size_t dim, double bound);

// Nearest codeword of a stage; ties resolve to the lowest index.
std::size_t nearest_code(const Codebooks& books, std::size_t stage, const double* x);

struct Quantized {
    CodeFrameSeq codes;
    Tensor sum_embedding; // [T, D]
    Tensor residual;      // [T, D]
    // Input of each active stage: stage_inputs[g] is the residual left by stages < g, [T, D].
    std::vector<Tensor> stage_inputs;
};

// Residual vector quantization of [T, D] latents with the first n_active stages.
Quantized rvq_quantize(const Tensor& latents, std::size_t n_active, const Codebooks& books);
// Sum of the codewords of the first n groups of every frame.
Tensor rvq_dequantize(const CodeFrameSeq& codes, std::size_t n, const Codebooks& books);

// Encoder/decoder parameters plus codebooks and their moving-average state.
class CodecModel {
public:
    explicit CodecModel(CodecConfig config, std::uint64_t seed = 0);

    const CodecConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    Codebooks& codebooks() { return books_; }
    const Codebooks& codebooks() const { return books_; }

    // Builds the encoder on x [B, T, 1] (T a multiple of the hop); returns [B, T / hop, D].
    Var encode(Graph& g, Var x) const;
    // Builds the decoder on [B, T, D]; returns [B, T * hop, 1], unclamped.
    Var decode(Graph& g, Var embedding) const;

    // Inference helpers on single waveforms.
    Tensor encode_latents(const dsp::Waveform& w) const;          // [T, D]
    dsp::Waveform decode_waveform(const Tensor& sum_embedding) const; // clamped to [-1, 1]
    CodeFrameSeq encode_codes(const dsp::Waveform& w, std::size_t n_active) const;
    dsp::Waveform decode_codes(const CodeFrameSeq& codes, std::size_t n) const;
    dsp::Waveform round_trip(const dsp::Waveform& w, std::size_t n) const;

    // Everything needed to resume: parameters, codebooks, and EMA state.
    TensorMap state() const;
    void load_state(const TensorMap& tensors);

    // Moving-average bookkeeping; public for the trainer.
    Tensor ema_counts; // [Q, K]
    Tensor ema_sums;   // [Q, K, D]
    Tensor idle_steps; // [Q, K]

private:
    void init_params(std::uint64_t seed);

    CodecConfig config_;
    ParameterStore params_;
    Codebooks books_;
};

// Zero-pads samples at the end to a whole number of frames.
std::vector<double> pad_to_hop(std::span<const double> samples, const CodecConfig& config);

struct CodecLossTerms {
    Var total;
    Var time;
    Var spectral;
    Var commitment;
};

// x and recon [B, T] or [T]; latents and sum_embedding share a shape.
CodecLossTerms codec_loss(Graph& g, Var x, Var recon, Var latents, const Tensor& sum_embedding,
                          const CodecConfig& config);

struct CodecLossValues {
    double total = 0.0;
    double time = 0.0;
    double spectral = 0.0;
    double commitment = 0.0;
};

CodecLossValues codec_loss(const dsp::Waveform& x, const dsp::Waveform& recon, const Tensor& latents,
                           const Tensor& sum_embedding, const CodecConfig& config);

// Structured dropout choices: every active count from 1 to Q.
std::vector<std::size_t> dropout_choices(std::size_t num_quantizers);

struct CodecStepReport {
    std::size_t step = 0;
    std::size_t n_active = 0;
    CodecLossValues loss;
    std::size_t reseeded = 0;
};

class CodecTrainer {
public:
    CodecTrainer(CodecModel& model, AdamConfig adam, std::uint64_t seed);

    // Seeds stage g codebooks with residuals drawn from the given latent frames.
    void init_codebooks(const std::vector<Tensor>& latents);

    // One step on equal-length clips: structured dropout, straight-through
    // gradients to the encoder, Adam on encoder/decoder, EMA on codebooks.
    CodecStepReport step(const std::vector<dsp::Waveform>& batch);

    // Loss with every quantizer active and no parameter change.
    CodecLossValues measure(const std::vector<dsp::Waveform>& batch) const;

    Adam& optimizer() { return adam_; }
    Rng& rng() { return rng_; }

private:
    void update_codebooks(const Quantized& q);

    CodecModel& model_;
    Adam adam_;
    Rng rng_;
};

// Text dump: "# Q=<groups> K=<size> T=<frames>" then one line of indices per frame.
std::string codes_to_text(const CodeFrameSeq& codes, std::size_t codebook_size);
CodeFrameSeq codes_from_text(const std::string& text);
// Binary: "LGPTCODE", u32 T, u16 Q, u16 indices row-major.
std::vector<std::uint8_t> codes_to_binary(const CodeFrameSeq& codes);
CodeFrameSeq codes_from_binary(const std::vector<std::uint8_t>& bytes);
void write_codes(const std::filesystem::path& path, const CodeFrameSeq& codes);
CodeFrameSeq read_codes(const std::filesystem::path& path);

} // namespace lgpt::codec
