#include "lgpt/dsp/audio.hpp"

#include "lgpt/error.hpp"
#include "lgpt/io/binary.hpp"
#include "lgpt/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace lgpt::dsp {

Tensor stft_magnitude(const Waveform& w, const StftConfig& config) {
    if (w.empty()) throw Error("stft of empty waveform");
    if (!kernels::is_power_of_two(config.win)) throw Error("STFT window must be a power of two");
    if (config.hop == 0 || config.hop > config.win) throw Error("STFT hop must be in (0, win]");
    const std::size_t n = w.size(), frames = (n + config.hop - 1) / config.hop, bins = config.win / 2 + 1;
    std::vector<double> window(config.win, 1.0);
    if (config.hann) {
        for (std::size_t i = 0; i < config.win; ++i) {
            window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                             static_cast<double>(config.win));
        }
    }
    const kernels::Fft fft(config.win);
    std::vector<std::complex<double>> buf(config.win);
    Tensor out({frames, bins});
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t i = 0; i < config.win; ++i) {
            const std::size_t at = f * config.hop + i;
            buf[i] = at < n ? window[i] * w.samples[at] : 0.0;
        }
        fft.forward(buf);
        for (std::size_t k = 0; k < bins; ++k) out.at(f, k) = std::abs(buf[k]);
    }
    return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(std::size_t fft_size, int sample_rate, const MelConfig& config) {
    if (config.bins < 2) throw Error("mel filterbank needs at least 2 bins");
    const std::size_t bins = fft_size / 2 + 1;
    const double lo = hz_to_mel(config.f_min), hi = hz_to_mel(config.f_max);
    std::vector<double> edges(config.bins + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(config.bins + 1));
    }
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(fft_size);
    Tensor fb({config.bins, bins});
    for (std::size_t m = 0; m < config.bins; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        double total = 0.0;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            double v = 0.0;
            if (f > left && f <= center) v = (f - left) / (center - left);
            else if (f > center && f < right) v = (right - f) / (right - center);
            fb.at(m, k) = v;
            total += v;
        }
        // Narrow low filters may fall between bin centers; give them the nearest bin.
        if (total <= 0.0) {
            const auto k = std::min(bins - 1, static_cast<std::size_t>(std::lround(center / bin_hz)));
            fb.at(m, k) = 1.0;
        }
    }
    return fb;
}

MelFeatures log_mel(const Tensor& magnitudes, const MelConfig& config, std::size_t fft_size, int sample_rate,
                    double frame_shift_ms) {
    const Tensor fb = mel_filterbank(fft_size, sample_rate, config);
    if (magnitudes.rank() != 2 || magnitudes.cols() != fb.cols()) {
        throw ShapeError("magnitudes " + shape_string(magnitudes.shape()) + " do not match a " +
                         std::to_string(fft_size) + "-point filterbank");
    }
    MelFeatures out;
    out.frame_shift_ms = frame_shift_ms;
    out.frames = Tensor({magnitudes.rows(), config.bins});
    kernels::gemm_bt(magnitudes.data(), fb.data(), out.frames.data(), magnitudes.rows(), fb.cols(), config.bins);
    for (auto& v : out.frames.storage()) v = std::log(v + config.floor);
    return out;
}

LfrFeatures lfr_stack(const MelFeatures& mel, std::size_t factor) {
    if (factor < 1) throw Error("LFR factor must be at least 1");
    const std::size_t t = mel.count(), b = mel.frames.cols();
    if (t == 0) throw Error("LFR of empty feature sequence");
    const std::size_t rows = (t + factor - 1) / factor;
    LfrFeatures out;
    out.factor = factor;
    out.frames = Tensor({rows, b * factor});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < factor; ++j) {
            const std::size_t src = std::min(r * factor + j, t - 1);
            std::copy_n(mel.frames.data() + src * b, b, out.frames.data() + r * b * factor + j * b);
        }
    }
    return out;
}

MelFeatures mel_features(const Waveform& w, const FrontendConfig& config) {
    const double shift_ms = 1000.0 * static_cast<double>(config.stft.hop) / static_cast<double>(w.sample_rate);
    return log_mel(stft_magnitude(w, config.stft), config.mel, config.stft.win, w.sample_rate, shift_ms);
}

LfrFeatures lfr_features(const Waveform& w, const FrontendConfig& config) {
    return lfr_stack(mel_features(w, config), config.lfr_factor);
}

namespace {

std::uint32_t fourcc(const char* s) {
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
}

} // namespace

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.size() * 2);
    io::ByteWriter out;
    out.u32(fourcc("RIFF"));
    out.u32(36 + data_bytes);
    out.u32(fourcc("WAVE"));
    out.u32(fourcc("fmt "));
    out.u32(16);
    out.u16(1);
    out.u16(1);
    out.u32(static_cast<std::uint32_t>(w.sample_rate));
    out.u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
    out.u16(2);
    out.u16(16);
    out.u32(fourcc("data"));
    out.u32(data_bytes);
    for (double s : w.samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        out.i16(static_cast<std::int16_t>(std::lround(c * 32767.0)));
    }
    return out.buffer();
}

Waveform decode_wav(const std::vector<std::uint8_t>& bytes, const std::string& source) {
    io::ByteReader r(bytes, source);
    if (r.u32() != fourcc("RIFF")) throw FormatError(source + ": not a RIFF file");
    r.u32();
    if (r.u32() != fourcc("WAVE")) throw FormatError(source + ": not a WAVE file");
    bool have_fmt = false;
    Waveform w;
    while (!r.at_end()) {
        const auto id = r.u32();
        const auto size = r.u32();
        if (id == fourcc("fmt ")) {
            if (size < 16) throw FormatError(source + ": truncated fmt chunk");
            const auto format = r.u16();
            const auto channels = r.u16();
            const auto rate = r.u32();
            r.u32();
            r.u16();
            const auto bits = r.u16();
            r.skip(size - 16 + (size & 1));
            if (format != 1) throw FormatError(source + ": unsupported WAV encoding " + std::to_string(format) + " (need PCM)");
            if (channels != 1) throw FormatError(source + ": " + std::to_string(channels) + " channels (need mono)");
            if (rate != static_cast<std::uint32_t>(kSampleRate)) {
                throw FormatError(source + ": sample rate " + std::to_string(rate) + " Hz (need 16000)");
            }
            if (bits != 16) throw FormatError(source + ": " + std::to_string(bits) + "-bit samples (need 16)");
            w.sample_rate = static_cast<int>(rate);
            have_fmt = true;
        } else if (id == fourcc("data")) {
            if (!have_fmt) throw FormatError(source + ": data chunk before fmt chunk");
            if (size % 2 != 0) throw FormatError(source + ": odd PCM16 data size");
            w.samples.resize(size / 2);
            for (auto& s : w.samples) s = static_cast<double>(r.i16()) / 32767.0;
            return w;
        } else {
            r.skip(size + (size & 1));
        }
    }
    throw FormatError(source + ": no data chunk");
}

Waveform read_wav(const std::filesystem::path& path) { return decode_wav(io::read_file(path), path.string()); }

void write_wav(const std::filesystem::path& path, const Waveform& w) { io::write_file_atomic(path, encode_wav(w)); }

double snr_db(std::span<const double> reference, std::span<const double> estimate) {
    double signal = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double e = i < estimate.size() ? estimate[i] : 0.0;
        signal += reference[i] * reference[i];
        noise += (reference[i] - e) * (reference[i] - e);
    }
    if (noise == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / noise);
}

double log_mel_distance(const Waveform& reference, const Waveform& estimate, const FrontendConfig& config) {
    const auto a = mel_features(reference, config);
    const auto b = mel_features(estimate, config);
    const std::size_t frames = std::min(a.count(), b.count());
    const std::size_t bins = a.frames.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < frames * bins; ++i) total += std::abs(a.frames[i] - b.frames[i]);
    return total / static_cast<double>(frames * bins);
}

} // namespace lgpt::dsp
