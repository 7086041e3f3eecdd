#pragma once

#include "lgpt/codec/codec.hpp"
#include "lgpt/dsp/audio.hpp"
#include "lgpt/lm/vocab.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lgpt::tasks {

struct CorpusSpec {
    std::size_t alphabet = 16;
    double base_hz = 500.0;
    double step_hz = 100.0;
    double symbol_ms = 100.0;
    double amplitude = 0.5;
    std::size_t min_symbols = 4;
    std::size_t max_symbols = 10;
    int snr_min_db = 2;
    int snr_max_db = 15;
    std::uint64_t permutation_seed = 7;
    // Every eval_every-th hash bucket goes to the eval split.
    std::size_t eval_every = 5;

    void validate() const;
    double frequency(std::size_t symbol) const;
    std::size_t symbol_samples() const;
};

inline constexpr std::size_t kClassCount = 3;

// Toy tasks: SER, SLU and AAC share one classification task that uses the SER token.
enum class ToyTask : std::uint8_t { asr, s2tt, cls, se, tts };
inline constexpr std::size_t kToyTaskCount = 5;

lm::TaskId task_token(ToyTask t);
std::string toy_task_name(ToyTask t);
ToyTask parse_toy_task(const std::string& name);

enum class Split : std::uint8_t { train, eval };

struct Example {
    std::string id;
    ToyTask task = ToyTask::asr;
    std::vector<std::size_t> symbols;
    dsp::Waveform input;             // audio input (noisy for SE); empty for TTS
    dsp::Waveform clean;             // reference audio for SE and TTS
    std::vector<std::size_t> text;   // text input (TTS) or text target (ASR, S2TT, CLS)
    int label = -1;                  // CLS class
    double snr_db = 0.0;             // SE mixing SNR
};

// Fixed bijection over symbols derived from CorpusSpec::permutation_seed.
std::vector<std::size_t> permutation(const CorpusSpec& spec);
// Mean-frequency tercile: the frequency range split into three equal bands.
int tercile_class(const std::vector<std::size_t>& symbols, const CorpusSpec& spec);
// Phase-continuous tone sequence, one tone per symbol.
dsp::Waveform render_tones(const std::vector<std::size_t>& symbols, const CorpusSpec& spec);
// Adds white noise scaled so the clean-to-noise energy ratio is exactly snr_db.
dsp::Waveform add_noise(const dsp::Waveform& clean, double snr_db, std::uint64_t seed);
// Recovers symbols by the strongest DFT bin of each symbol-length segment.
std::vector<std::size_t> transcribe_by_peak(const dsp::Waveform& w, const CorpusSpec& spec);

// Deterministic hash split of utterance ids.
Split split_of(const std::string& id, const CorpusSpec& spec);

// Generates `count` examples of one split; each utterance is fixed by (seed, index).
std::vector<Example> gen_corpus(const CorpusSpec& spec, ToyTask task, std::size_t count, std::uint64_t seed,
                                Split split = Split::train);

// Text token ids: symbols first, then the class labels.
inline std::size_t class_token(int label, const CorpusSpec& spec) {
    return spec.alphabet + static_cast<std::size_t>(label);
}
// Text vocabulary size including <S> and <E>.
inline std::size_t text_vocab_size(const CorpusSpec& spec) { return spec.alphabet + kClassCount + 2; }

// Symbols as lowercase letters; the manifest's text field.
std::string symbols_to_string(const std::vector<std::size_t>& tokens, const CorpusSpec& spec);

// One JSON record per line: {id, task, wav_path?, text?, codes_path?, label?}.
// wav_path holds the audio input, or the reference audio for TTS. With a codec,
// SE and TTS records also get the reference's full code matrix in codes_path.
// Files are written under out_dir; the manifest path is returned.
std::filesystem::path write_manifest(const std::vector<Example>& corpus, const CorpusSpec& spec,
                                     const std::filesystem::path& out_dir,
                                     const codec::CodecModel* codec = nullptr);

struct ManifestRecord {
    std::string id;
    std::string task;
    std::string wav_path;
    std::string text;
    std::string codes_path;
    int label = -1;
};
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

} // namespace lgpt::tasks
