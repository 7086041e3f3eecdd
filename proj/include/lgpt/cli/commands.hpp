#pragma once

#include "lgpt/cli/config.hpp"
#include "lgpt/tasks/pipeline.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lgpt::cli {

enum ExitCode : int { kOk = 0, kAssertionFailed = 1, kUsage = 2, kIo = 3 };

// Usage and config problems map to 2, I/O and file format problems to 3,
// anything else to 1.
int exit_code_for(const std::exception& e);

struct Checkpoints {
    std::filesystem::path codec;
    std::filesystem::path lm;
    std::filesystem::path vocoder;
};

codec::CodecModel load_codec(const Config& config, const std::filesystem::path& path);
lm::LanguageModel load_lm(const Config& config, const std::filesystem::path& path);
std::unique_ptr<vocoder::Predictor> load_vocoder(const Config& config, const codec::CodecModel& codec, const std::filesystem::path& path);

struct TrainOptions {
    std::optional<std::size_t> steps;  // overrides the config
    std::filesystem::path codec;       // trained codec; required for lm and vocoder
    std::filesystem::path resume;      // continue from this checkpoint's weights
    std::size_t log_every = 0;         // progress lines on stderr; 0 disables
};

// Trains codec, lm or vocoder. Writes <component>.ckpt, config.cfg and
// report.json under out_dir and returns the report.
nlohmann::json cmd_train(const std::string& component, const Config& config, const std::filesystem::path& out_dir,
                         const TrainOptions& options);

// Examples of a manifest written by write_manifest; audio paths are relative to the manifest.
std::vector<tasks::Example> examples_from_manifest(const std::filesystem::path& manifest, const tasks::CorpusSpec& spec);

// Writes a corpus manifest and returns a summary.
nlohmann::json cmd_corpus(const std::string& task, const Config& config, std::size_t count, tasks::Split split,
                          const std::filesystem::path& out_dir, const std::filesystem::path& codec_checkpoint = {});

// Metrics of one task on a manifest (or on a generated eval split when the
// manifest path is empty). noisy_asr scores ASR on SE inputs.
nlohmann::json cmd_eval(const std::string& task, const Config& config, const Checkpoints& checkpoints,
                        const std::filesystem::path& manifest, const std::filesystem::path& out_file);

struct Assertion {
    std::string metric;
    std::string op;
    double value = 0.0;
};
// Parses "name>=value" (also <=, >, <, ==). Throws UsageError.
Assertion parse_assertion(const std::string& text);
// Throws UsageError when the metric is missing.
bool holds(const Assertion& a, const nlohmann::json& metrics);

// Reconstructions for each n; reports SNR per n and whether SNR is
// non-decreasing in n within 0.1 dB.
nlohmann::json cmd_codec_roundtrip(const Config& config, const std::filesystem::path& codec_checkpoint,
                                   const std::filesystem::path& wav_in, const std::vector<std::size_t>& ns,
                                   const std::filesystem::path& out_dir);

// Runs a chain plan on one WAV and saves every step's output under out_dir.
nlohmann::json cmd_chain(const std::string& plan, const Config& config, const Checkpoints& checkpoints,
                         const std::filesystem::path& wav_in, const std::filesystem::path& out_dir);

// Writes text to path through a temporary file and a rename.
void write_atomically(const std::filesystem::path& path, const std::string& text);

} // namespace lgpt::cli
