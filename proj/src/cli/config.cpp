#include "lgpt/cli/config.hpp"

#include "lgpt/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace lgpt::cli {

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::uint64_t to_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
}

int to_int(const std::string& v) {
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
    return out;
}

std::string from_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
    return out;
}

Field size_field(std::string section, std::string key, std::size_t& ref) {
    return {section, key, [&ref](const std::string& v) { ref = static_cast<std::size_t>(to_u64(v)); },
            [&ref] { return std::to_string(ref); }};
}

Field u64_field(std::string section, std::string key, std::uint64_t& ref) {
    return {section, key, [&ref](const std::string& v) { ref = to_u64(v); }, [&ref] { return std::to_string(ref); }};
}

Field int_field(std::string section, std::string key, int& ref) {
    return {section, key, [&ref](const std::string& v) { ref = to_int(v); }, [&ref] { return std::to_string(ref); }};
}

Field double_field(std::string section, std::string key, double& ref) {
    return {section, key, [&ref](const std::string& v) { ref = to_double(v); }, [&ref] { return from_double(ref); }};
}

Field bool_field(std::string section, std::string key, bool& ref) {
    return {section, key, [&ref](const std::string& v) { ref = to_bool(v); }, [&ref] { return ref ? "true" : "false"; }};
}

Field sizes_field(std::string section, std::string key, std::vector<std::size_t>& ref) {
    return {section, key,
            [&ref](const std::string& v) {
                ref.clear();
                for (const auto& s : split_list(v)) ref.push_back(static_cast<std::size_t>(to_u64(s)));
            },
            [&ref] {
                std::vector<std::string> items;
                for (auto s : ref) items.push_back(std::to_string(s));
                return join(items);
            }};
}

Field adam_fields(std::string section, std::string key, AdamConfig& ref, bool lr) {
    if (lr) return double_field(std::move(section), std::move(key), ref.peak_lr);
    return size_field(std::move(section), std::move(key), ref.warmup_steps);
}

std::vector<Field> fields(Config& c) {
    std::vector<Field> f;
    f.push_back(u64_field("numerics", "seed", c.seed));

    f.push_back(size_field("dsp", "stft_win", c.frontend.stft.win));
    f.push_back(size_field("dsp", "stft_hop", c.frontend.stft.hop));
    f.push_back(size_field("dsp", "mel_bins", c.frontend.mel.bins));
    f.push_back(size_field("dsp", "lfr_factor", c.frontend.lfr_factor));

    f.push_back(sizes_field("codec", "strides", c.codec.strides));
    f.push_back(sizes_field("codec", "channels", c.codec.channels));
    f.push_back(size_field("codec", "latent_dim", c.codec.latent_dim));
    f.push_back(size_field("codec", "num_quantizers", c.codec.num_quantizers));
    f.push_back(size_field("codec", "codebook_size", c.codec.codebook_size));
    f.push_back(double_field("codec", "commitment", c.codec.commitment));
    f.push_back(sizes_field("codec", "spectral_windows", c.codec.spectral_windows));
    f.push_back(double_field("codec", "ema_decay", c.codec.ema_decay));
    f.push_back(size_field("codec", "dead_code_steps", c.codec.dead_code_steps));
    f.push_back(size_field("codec", "steps", c.codec_train.steps));
    f.push_back(size_field("codec", "batch", c.codec_train.batch));
    f.push_back(size_field("codec", "clips", c.codec_clips));
    f.push_back(size_field("codec", "init_clips", c.codec_train.init_clips));
    f.push_back(adam_fields("codec", "lr", c.codec_train.adam, true));
    f.push_back(adam_fields("codec", "warmup", c.codec_train.adam, false));

    f.push_back(size_field("lm", "layers", c.lm.layers));
    f.push_back(size_field("lm", "width", c.lm.width));
    f.push_back(size_field("lm", "heads", c.lm.heads));
    f.push_back(size_field("lm", "ff_dim", c.lm.ff_dim));
    f.push_back(size_field("lm", "max_length", c.lm.max_length));
    f.push_back(size_field("lm", "max_new_tokens", c.lm.max_new_tokens));
    f.push_back({"lm", "sampling",
                 [&c](const std::string& v) {
                     if (v == "greedy") c.lm.sampling = lm::Sampling::greedy;
                     else if (v == "top_k") c.lm.sampling = lm::Sampling::top_k;
                     else throw ConfigError("expected greedy or top_k, got '" + v + "'");
                 },
                 [&c] { return std::string(c.lm.sampling == lm::Sampling::greedy ? "greedy" : "top_k"); }});
    f.push_back(size_field("lm", "top_k", c.lm.top_k));
    f.push_back(u64_field("lm", "sampling_seed", c.lm.sampling_seed));
    f.push_back(size_field("lm", "encoder_blocks", c.encoder.blocks));
    f.push_back(size_field("lm", "encoder_heads", c.encoder.heads));
    f.push_back(size_field("lm", "encoder_ff_dim", c.encoder.ff_dim));
    f.push_back(size_field("lm", "encoder_conv_kernel", c.encoder.conv_kernel));
    f.push_back({"lm", "encoder_norm",
                 [&c](const std::string& v) {
                     if (v == "layer") c.encoder.norm = lm::Norm::layer;
                     else if (v == "batch") c.encoder.norm = lm::Norm::batch;
                     else throw ConfigError("expected layer or batch, got '" + v + "'");
                 },
                 [&c] { return std::string(c.encoder.norm == lm::Norm::layer ? "layer" : "batch"); }});
    f.push_back(size_field("lm", "steps", c.lm_train.steps));
    f.push_back(size_field("lm", "batch", c.lm_train.batch));
    f.push_back(adam_fields("lm", "lr", c.lm_train.adam, true));
    f.push_back(adam_fields("lm", "warmup", c.lm_train.adam, false));
    f.push_back(size_field("lm", "train_per_task", c.lm_train_per_task));
    f.push_back(size_field("lm", "average_last", c.lm_train.average_last));
    f.push_back({"lm", "refresh_start",
                 [&c](const std::string& v) { c.lm_train.refresh_start = v == "none" ? SIZE_MAX : static_cast<std::size_t>(to_u64(v)); },
                 [&c] { return c.lm_train.refresh_start == SIZE_MAX ? std::string("none") : std::to_string(c.lm_train.refresh_start); }});
    f.push_back({"lm", "refresh_tasks",
                 [&c](const std::string& v) {
                     c.lm_train.refresh_tasks.clear();
                     for (const auto& name : split_list(v)) c.lm_train.refresh_tasks.insert(tasks::task_token(tasks::parse_toy_task(name)));
                 },
                 [&c] {
                     std::vector<std::string> names;
                     for (std::size_t i = 0; i < tasks::kToyTaskCount; ++i) {
                         const auto t = static_cast<tasks::ToyTask>(i);
                         if (c.lm_train.refresh_tasks.count(tasks::task_token(t))) names.push_back(tasks::toy_task_name(t));
                     }
                     return join(names);
                 }});

    f.push_back(size_field("vocoder", "layers", c.vocoder.layers));
    f.push_back(size_field("vocoder", "heads", c.vocoder.heads));
    f.push_back(size_field("vocoder", "ff_dim", c.vocoder.ff_dim));
    f.push_back(size_field("vocoder", "max_rows", c.vocoder.max_rows));
    f.push_back(size_field("vocoder", "steps", c.vocoder_train.steps));
    f.push_back(size_field("vocoder", "batch", c.vocoder_train.batch));
    f.push_back(adam_fields("vocoder", "lr", c.vocoder_train.adam, true));
    f.push_back(adam_fields("vocoder", "warmup", c.vocoder_train.adam, false));
    f.push_back(size_field("vocoder", "train_per_task", c.vocoder_train_per_task));
    f.push_back(bool_field("vocoder", "conditioned", c.vocoder_conditioned));

    f.push_back(size_field("tasks", "alphabet", c.corpus.alphabet));
    f.push_back(double_field("tasks", "base_hz", c.corpus.base_hz));
    f.push_back(double_field("tasks", "step_hz", c.corpus.step_hz));
    f.push_back(double_field("tasks", "symbol_ms", c.corpus.symbol_ms));
    f.push_back(double_field("tasks", "amplitude", c.corpus.amplitude));
    f.push_back(size_field("tasks", "min_symbols", c.corpus.min_symbols));
    f.push_back(size_field("tasks", "max_symbols", c.corpus.max_symbols));
    f.push_back(int_field("tasks", "snr_min_db", c.corpus.snr_min_db));
    f.push_back(int_field("tasks", "snr_max_db", c.corpus.snr_max_db));
    f.push_back(u64_field("tasks", "permutation_seed", c.corpus.permutation_seed));
    f.push_back(size_field("tasks", "eval_every", c.corpus.eval_every));
    f.push_back(size_field("tasks", "eval_count", c.eval_count));
    return f;
}

} // namespace

void Config::resolve() {
    encoder.input_dim = frontend.mel.bins * frontend.lfr_factor;
    vocoder.width = codec.latent_dim;
    vocoder.text_tokens = tasks::text_vocab_size(corpus);
    vocoder.feature_dim = codec.latent_dim;
    if (frontend.stft.win < 2 || frontend.stft.hop < 1 || frontend.mel.bins < 1 || frontend.lfr_factor < 1) {
        throw ConfigError("invalid [dsp] section");
    }
    codec.validate();
    lm.validate();
    vocoder.validate();
    corpus.validate();
    if (codec_train.batch < 1 || lm_train.batch < 1 || vocoder_train.batch < 1) throw ConfigError("batch sizes must be >= 1");
    if (codec_clips < 1 || lm_train_per_task < 1 || vocoder_train_per_task < 1 || eval_count < 1) {
        throw ConfigError("corpus sizes must be >= 1");
    }
}

Config parse_config(const std::string& text, const std::string& source) {
    Config c;
    auto table = fields(c);
    std::istringstream in(text);
    std::string line, section;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(n) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : table) known = known || f.section == section;
            if (!known) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of any section");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = std::find_if(table.begin(), table.end(),
                               [&](const Field& f) { return f.section == section && f.key == key; });
        if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
        try {
            it->set(value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
    }
    c.resolve();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string dump_config(const Config& config) {
    Config copy = config;
    std::string out, section;
    for (const auto& f : fields(copy)) {
        if (f.section != section) {
            out += (section.empty() ? "" : "\n") + std::string("[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

std::string config_hash(const Config& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump_config(config)) h = (h ^ ch) * 0x100000001b3ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace lgpt::cli
