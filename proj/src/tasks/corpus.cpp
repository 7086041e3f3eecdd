#include "lgpt/tasks/corpus.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/random.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace lgpt::tasks {

void CorpusSpec::validate() const {
    if (alphabet < 2 || alphabet > 26) throw ConfigError("tasks.alphabet must be in [2, 26]");
    if (min_symbols < 2 || max_symbols < min_symbols) throw ConfigError("tasks symbol lengths must satisfy 2 <= min <= max");
    if (frequency(alphabet - 1) >= dsp::kSampleRate / 2.0) throw ConfigError("tone frequencies must stay below Nyquist");
    if (base_hz <= 0.0 || step_hz <= 0.0) throw ConfigError("tone frequencies must be positive");
    if (symbol_ms <= 0.0 || amplitude <= 0.0 || amplitude > 1.0) throw ConfigError("invalid tone duration or amplitude");
    if (snr_min_db > snr_max_db) throw ConfigError("tasks.snr_min_db must not exceed tasks.snr_max_db");
    if (eval_every < 2) throw ConfigError("tasks.eval_every must be >= 2");
}

double CorpusSpec::frequency(std::size_t symbol) const { return base_hz + step_hz * static_cast<double>(symbol); }

std::size_t CorpusSpec::symbol_samples() const {
    return static_cast<std::size_t>(std::lround(symbol_ms * dsp::kSampleRate / 1000.0));
}

lm::TaskId task_token(ToyTask t) {
    switch (t) {
    case ToyTask::asr: return lm::TaskId::asr;
    case ToyTask::s2tt: return lm::TaskId::s2tt;
    case ToyTask::cls: return lm::TaskId::ser;
    case ToyTask::se: return lm::TaskId::se;
    default: return lm::TaskId::tts;
    }
}

std::string toy_task_name(ToyTask t) {
    static const char* names[] = {"asr", "s2tt", "cls", "se", "tts"};
    return names[static_cast<std::size_t>(t)];
}

ToyTask parse_toy_task(const std::string& name) {
    for (std::size_t i = 0; i < kToyTaskCount; ++i) {
        if (toy_task_name(static_cast<ToyTask>(i)) == name) return static_cast<ToyTask>(i);
    }
    throw ConfigError("unknown task '" + name + "' (expected asr, s2tt, cls, se or tts)");
}

std::vector<std::size_t> permutation(const CorpusSpec& spec) {
    std::vector<std::size_t> pi(spec.alphabet);
    for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = i;
    Rng rng(mix_seed(spec.permutation_seed, 0x9e));
    rng.shuffle(pi);
    return pi;
}

int tercile_class(const std::vector<std::size_t>& symbols, const CorpusSpec& spec) {
    if (symbols.empty()) throw Error("cannot classify an empty symbol sequence");
    double mean = 0.0;
    for (auto s : symbols) mean += spec.frequency(s);
    mean /= static_cast<double>(symbols.size());
    const double lo = spec.frequency(0), span = spec.frequency(spec.alphabet - 1) - lo;
    const int c = static_cast<int>(std::floor(3.0 * (mean - lo) / span));
    return std::clamp(c, 0, 2);
}

dsp::Waveform render_tones(const std::vector<std::size_t>& symbols, const CorpusSpec& spec) {
    dsp::Waveform w;
    const std::size_t n = spec.symbol_samples();
    w.samples.reserve(n * symbols.size());
    double phase = 0.0;
    for (auto s : symbols) {
        if (s >= spec.alphabet) throw RangeError("symbol " + std::to_string(s) + " outside the alphabet");
        const double step = 2.0 * std::numbers::pi * spec.frequency(s) / dsp::kSampleRate;
        for (std::size_t i = 0; i < n; ++i) {
            w.samples.push_back(spec.amplitude * std::sin(phase));
            phase = std::fmod(phase + step, 2.0 * std::numbers::pi);
        }
    }
    return w;
}

dsp::Waveform add_noise(const dsp::Waveform& clean, double snr_db, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> noise(clean.size());
    double pn = 0.0, ps = 0.0;
    for (auto& v : noise) {
        v = rng.normal();
        pn += v * v;
    }
    for (auto v : clean.samples) ps += v * v;
    if (ps == 0.0 || pn == 0.0) throw Error("cannot mix noise into silent or empty audio");
    const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
    dsp::Waveform out = clean;
    for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] += gain * noise[i];
    return out;
}

std::vector<std::size_t> transcribe_by_peak(const dsp::Waveform& w, const CorpusSpec& spec) {
    const std::size_t n = spec.symbol_samples();
    std::vector<std::size_t> out;
    for (std::size_t start = 0; start + n <= w.size(); start += n) {
        std::size_t best_bin = 0;
        double best = -1.0;
        for (std::size_t k = 1; k < n / 2; ++k) {
            double re = 0.0, im = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = 2.0 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n);
                re += w.samples[start + i] * std::cos(a);
                im -= w.samples[start + i] * std::sin(a);
            }
            if (re * re + im * im > best) {
                best = re * re + im * im;
                best_bin = k;
            }
        }
        const double hz = static_cast<double>(best_bin) * dsp::kSampleRate / static_cast<double>(n);
        const double s = std::round((hz - spec.base_hz) / spec.step_hz);
        out.push_back(static_cast<std::size_t>(std::clamp(s, 0.0, static_cast<double>(spec.alphabet - 1))));
    }
    return out;
}

Split split_of(const std::string& id, const CorpusSpec& spec) {
    // FNV-1a over the id bytes, then a final mix.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : id) h = (h ^ c) * 0x100000001b3ULL;
    return mix_seed(h) % spec.eval_every == 0 ? Split::eval : Split::train;
}

namespace {

Example make_example(const CorpusSpec& spec, ToyTask task, const std::string& id, std::uint64_t seed) {
    Rng rng(seed);
    Example ex;
    ex.id = id;
    ex.task = task;
    const std::size_t len = spec.min_symbols + rng.index(spec.max_symbols - spec.min_symbols + 1);
    // No symbol repeats its predecessor, so every tone boundary is audible.
    for (std::size_t i = 0; i < len; ++i) {
        std::size_t s = rng.index(spec.alphabet);
        while (!ex.symbols.empty() && s == ex.symbols.back()) s = rng.index(spec.alphabet);
        ex.symbols.push_back(s);
    }
    const dsp::Waveform clean = render_tones(ex.symbols, spec);
    switch (task) {
    case ToyTask::asr:
        ex.input = clean;
        ex.text = ex.symbols;
        break;
    case ToyTask::s2tt: {
        ex.input = clean;
        const auto pi = permutation(spec);
        for (auto s : ex.symbols) ex.text.push_back(pi[s]);
        break;
    }
    case ToyTask::cls:
        ex.input = clean;
        ex.label = tercile_class(ex.symbols, spec);
        ex.text = {class_token(ex.label, spec)};
        break;
    case ToyTask::se: {
        ex.snr_db = static_cast<double>(spec.snr_min_db) +
                    static_cast<double>(rng.index(static_cast<std::size_t>(spec.snr_max_db - spec.snr_min_db + 1)));
        ex.input = add_noise(clean, ex.snr_db, mix_seed(seed, 0x401));
        ex.clean = clean;
        ex.text = ex.symbols;
        break;
    }
    case ToyTask::tts:
        ex.clean = clean;
        ex.text = ex.symbols;
        break;
    }
    return ex;
}

} // namespace

std::vector<Example> gen_corpus(const CorpusSpec& spec, ToyTask task, std::size_t count, std::uint64_t seed,
                                Split split) {
    spec.validate();
    if (count < 1) throw Error("corpus count must be >= 1");
    std::vector<Example> out;
    out.reserve(count);
    for (std::uint64_t i = 0; out.size() < count; ++i) {
        const std::string id = toy_task_name(task) + "-" + std::to_string(seed) + "-" + std::to_string(i);
        if (split_of(id, spec) != split) continue;
        out.push_back(make_example(spec, task, id, mix_seed(mix_seed(seed, static_cast<std::uint64_t>(task)), i)));
    }
    return out;
}

std::string symbols_to_string(const std::vector<std::size_t>& tokens, const CorpusSpec& spec) {
    std::string s;
    for (auto t : tokens) {
        if (t < spec.alphabet) {
            s += static_cast<char>('a' + t);
        } else if (t < spec.alphabet + kClassCount) {
            s += static_cast<char>('0' + (t - spec.alphabet));
        } else {
            throw RangeError("token " + std::to_string(t) + " has no text form");
        }
    }
    return s;
}

std::filesystem::path write_manifest(const std::vector<Example>& corpus, const CorpusSpec& spec,
                                     const std::filesystem::path& out_dir, const codec::CodecModel* codec) {
    std::filesystem::create_directories(out_dir / "audio");
    const auto path = out_dir / "manifest.jsonl";
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    for (const auto& ex : corpus) {
        nlohmann::json rec{{"id", ex.id}, {"task", toy_task_name(ex.task)}};
        const dsp::Waveform& audio = ex.task == ToyTask::tts ? ex.clean : ex.input;
        if (!audio.empty()) {
            const std::string rel = "audio/" + ex.id + ".wav";
            dsp::write_wav(out_dir / rel, audio);
            rec["wav_path"] = rel;
        }
        if (!ex.text.empty()) rec["text"] = symbols_to_string(ex.text, spec);
        if (codec && !ex.clean.empty()) {
            const std::string rel = "audio/" + ex.id + ".codes";
            codec::write_codes(out_dir / rel, codec->encode_codes(ex.clean, codec->config().num_quantizers));
            rec["codes_path"] = rel;
        }
        if (ex.label >= 0) rec["label"] = ex.label;
        f << rec.dump() << '\n';
    }
    if (!f) throw IoError("failed writing " + path.string());
    return path;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            r.task = j.at("task").get<std::string>();
            r.wav_path = j.value("wav_path", "");
            r.text = j.value("text", "");
            r.codes_path = j.value("codes_path", "");
            r.label = j.value("label", -1);
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

} // namespace lgpt::tasks
