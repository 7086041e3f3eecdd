#pragma once

#include "lgpt/codec/codec.hpp"
#include "lgpt/dsp/audio.hpp"
#include "lgpt/lm/model.hpp"
#include "lgpt/tasks/corpus.hpp"
#include "lgpt/tasks/harness.hpp"
#include "lgpt/vocoder/vocoder.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace lgpt::cli {

// Every tunable default, grouped by the config file sections
// [numerics] [dsp] [codec] [lm] [vocoder] [tasks].
struct Config {
    std::uint64_t seed = 1;

    dsp::FrontendConfig frontend;

    codec::CodecConfig codec;
    tasks::CodecSchedule codec_train;
    std::size_t codec_clips = 200;

    lm::LMConfig lm;
    lm::AudioEncoderConfig encoder;
    tasks::LmSchedule lm_train;
    std::size_t lm_train_per_task = 2000;

    vocoder::PredictorConfig vocoder;
    tasks::VocoderSchedule vocoder_train;
    std::size_t vocoder_train_per_task = 200;
    bool vocoder_conditioned = true;

    tasks::CorpusSpec corpus;
    std::size_t eval_count = 50;

    // Fills the dependent fields (encoder input width, predictor vocabulary
    // and width) and validates every section. Throws ConfigError.
    void resolve();
};

// key = value lines under [section] headers; '#' starts a comment. Unknown
// sections or keys and malformed values raise ConfigError naming the line.
Config parse_config(const std::string& text, const std::string& source = "<config>");
Config load_config(const std::filesystem::path& path);
// Fully resolved config in the same format, one line per key.
std::string dump_config(const Config& config);
// FNV-1a of dump_config, as 16 hex digits.
std::string config_hash(const Config& config);

} // namespace lgpt::cli
