#pragma once

#include "lgpt/numerics/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lgpt::dsp {

inline constexpr int kSampleRate = 16000;

struct Waveform {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

struct StftConfig {
    std::size_t win = 512;
    std::size_t hop = 160;
    bool hann = true; // false: rectangular window
};

// [ceil(n / hop), win / 2 + 1] magnitudes; frame f covers samples
// [f * hop, f * hop + win) with zeros past the end.
Tensor stft_magnitude(const Waveform& w, const StftConfig& config = {});

struct MelConfig {
    std::size_t bins = 40;
    double f_min = 0.0;
    double f_max = 8000.0;
    double floor = 1e-10;
};

struct MelFeatures {
    Tensor frames; // [T, bins], natural-log energies
    double frame_shift_ms = 10.0;

    std::size_t count() const { return frames.rows(); }
};

struct LfrFeatures {
    Tensor frames; // [ceil(T / factor), bins * factor]
    std::size_t factor = 6;

    std::size_t count() const { return frames.rows(); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters on the HTK mel scale: [mel bins, fft bins].
Tensor mel_filterbank(std::size_t fft_size, int sample_rate, const MelConfig& config = {});

// ln(filterbank . magnitude + floor) per frame.
MelFeatures log_mel(const Tensor& magnitudes, const MelConfig& config = {}, std::size_t fft_size = 512,
                    int sample_rate = kSampleRate, double frame_shift_ms = 10.0);

// Stacks `factor` consecutive frames; the tail is padded by repeating the last frame.
LfrFeatures lfr_stack(const MelFeatures& mel, std::size_t factor = 6);

struct FrontendConfig {
    StftConfig stft;
    MelConfig mel;
    std::size_t lfr_factor = 6;
};

MelFeatures mel_features(const Waveform& w, const FrontendConfig& config = {});
LfrFeatures lfr_features(const Waveform& w, const FrontendConfig& config = {});

// PCM16, mono, 16 kHz only.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);
std::vector<std::uint8_t> encode_wav(const Waveform& w);
Waveform decode_wav(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

// 10 log10(sum ref^2 / sum (ref - est)^2) over the reference length; the
// estimate is zero-extended or truncated to match.
double snr_db(std::span<const double> reference, std::span<const double> estimate);

// Mean absolute difference of log-mel features over the common frame count.
double log_mel_distance(const Waveform& reference, const Waveform& estimate, const FrontendConfig& config = {});

} // namespace lgpt::dsp
