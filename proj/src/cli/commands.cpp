#include "lgpt/cli/commands.hpp"

#include "lgpt/error.hpp"
#include "lgpt/numerics/checkpoint.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace lgpt::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kUsage;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kIo;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
    return kAssertionFailed;
}

void write_atomically(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f << text;
        if (!f) throw IoError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

namespace {

void load_params(ParameterStore& store, const TensorMap& tensors, const std::string& what) {
    for (auto& [name, value] : store.tensors()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError(what + " checkpoint is missing '" + name + "'");
        if (it->second.shape() != value.shape()) {
            throw FormatError(what + " checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                              ", config expects " + shape_string(value.shape()));
        }
        value = it->second;
    }
}

TensorMap read_model(const fs::path& path, const std::string& what) {
    if (path.empty()) throw UsageError("a " + what + " checkpoint is required");
    const TensorMap model = under_prefix(load_checkpoint(path), "model.");
    if (model.empty()) throw FormatError(path.string() + " holds no model tensors");
    return model;
}

void save_model(const fs::path& path, const TensorMap& model) { save_checkpoint(path, with_prefix(model, "model.")); }

tasks::Progress progress_printer(const std::string& component, std::size_t every) {
    if (every == 0) return {};
    return [component, every](std::size_t step, double loss) {
        if (step % every == 0) std::fprintf(stderr, "[%s] step %zu loss %.6f\n", component.c_str(), step, loss);
    };
}

std::vector<std::size_t> parse_text(const std::string& text, const tasks::CorpusSpec& spec) {
    std::vector<std::size_t> out;
    for (char ch : text) {
        if (ch >= 'a' && static_cast<std::size_t>(ch - 'a') < spec.alphabet) {
            out.push_back(static_cast<std::size_t>(ch - 'a'));
        } else if (ch >= '0' && static_cast<std::size_t>(ch - '0') < tasks::kClassCount) {
            out.push_back(tasks::class_token(ch - '0', spec));
        } else {
            throw FormatError(std::string("character '") + ch + "' is not a toy symbol");
        }
    }
    return out;
}

std::vector<vocoder::VocoderExample> vocoder_data(const Config& config, const tasks::Pipeline& pipeline, bool conditioned) {
    std::vector<vocoder::VocoderExample> data;
    for (auto task : {tasks::ToyTask::tts, tasks::ToyTask::se}) {
        for (const auto& ex : tasks::gen_corpus(config.corpus, task, config.vocoder_train_per_task, config.seed)) {
            data.push_back(pipeline.vocoder_example(ex, conditioned));
        }
    }
    return data;
}

// Entry 0 is the loss measured before training, entry s the loss of step s.
std::vector<double> loss_curve(const tasks::TrainLog& log) {
    std::vector<double> out{log.initial};
    out.insert(out.end(), log.losses.begin(), log.losses.end());
    return out;
}

} // namespace

codec::CodecModel load_codec(const Config& config, const fs::path& path) {
    codec::CodecModel model(config.codec, config.seed);
    model.load_state(read_model(path, "codec"));
    return model;
}

lm::LanguageModel load_lm(const Config& config, const fs::path& path) {
    lm::LanguageModel model(tasks::toy_vocab(config.corpus, config.codec), config.lm, config.encoder, config.seed);
    load_params(model.params(), read_model(path, "lm"), "lm");
    return model;
}

std::unique_ptr<vocoder::Predictor> load_vocoder(const Config& config, const codec::CodecModel& codec,
                                                 const fs::path& path) {
    auto p = std::make_unique<vocoder::Predictor>(config.vocoder, codec.codebooks(), config.seed);
    load_params(p->params(), read_model(path, "vocoder"), "vocoder");
    return p;
}

nlohmann::json cmd_train(const std::string& component, const Config& config, const fs::path& out_dir,
                         const TrainOptions& options) {
    if (component != "codec" && component != "lm" && component != "vocoder") {
        throw UsageError("unknown component '" + component + "' (expected codec, lm or vocoder)");
    }
    fs::create_directories(out_dir);
    const auto start = std::chrono::steady_clock::now();
    const auto progress = progress_printer(component, options.log_every);
    tasks::TrainLog log;
    nlohmann::json extra = nlohmann::json::object();
    TensorMap state;

    if (component == "codec") {
        codec::CodecModel model(config.codec, config.seed);
        tasks::CodecSchedule s = config.codec_train;
        s.seed = config.seed;
        if (options.steps) s.steps = *options.steps;
        if (!options.resume.empty()) {
            model.load_state(read_model(options.resume, "codec"));
            s.init_codebooks = false;
        }
        log = tasks::train_codec(model, tasks::codec_clips(config.corpus, config.codec_clips, config.seed), s, progress);
        state = model.state();
    } else {
        const codec::CodecModel codec = load_codec(config, options.codec);
        if (component == "lm") {
            lm::LanguageModel model(tasks::toy_vocab(config.corpus, config.codec), config.lm, config.encoder, config.seed);
            if (!options.resume.empty()) load_params(model.params(), read_model(options.resume, "lm"), "lm");
            const tasks::Pipeline pipeline(config.corpus, codec);
            std::vector<lm::UnifiedSequence> data;
            for (std::size_t t = 0; t < tasks::kToyTaskCount; ++t) {
                for (const auto& ex : tasks::gen_corpus(config.corpus, static_cast<tasks::ToyTask>(t),
                                                        config.lm_train_per_task, config.seed)) {
                    data.push_back(pipeline.sequence(ex));
                }
            }
            tasks::LmSchedule s = config.lm_train;
            s.seed = config.seed;
            if (options.steps) s.steps = *options.steps;
            log = tasks::train_lm(model, data, s, progress);
            state = model.params().tensors();
            extra["sequences"] = data.size();
        } else {
            vocoder::Predictor predictor(config.vocoder, codec.codebooks(), config.seed);
            if (!options.resume.empty()) load_params(predictor.params(), read_model(options.resume, "vocoder"), "vocoder");
            const tasks::Pipeline pipeline(config.corpus, codec);
            const auto data = vocoder_data(config, pipeline, config.vocoder_conditioned);
            tasks::VocoderSchedule s = config.vocoder_train;
            s.seed = config.seed;
            if (options.steps) s.steps = *options.steps;
            log = tasks::train_vocoder(predictor, codec.codebooks(), data, s, progress);
            state = predictor.params().tensors();
            extra["examples"] = data.size();
            extra["conditioned"] = config.vocoder_conditioned;
        }
    }

    save_model(out_dir / (component + ".ckpt"), state);
    write_atomically(out_dir / "config.cfg", dump_config(config));
    nlohmann::json report{{"command", "train"},
                          {"component", component},
                          {"config_hash", config_hash(config)},
                          {"seed", config.seed},
                          {"steps", log.losses.size()},
                          {"losses", loss_curve(log)},
                          {"metrics", {{"initial_loss", log.initial}, {"final_loss", log.final}}},
                          {"checkpoint", (out_dir / (component + ".ckpt")).string()},
                          {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    report["metrics"].update(extra);
    write_atomically(out_dir / "report.json", report.dump(2) + "\n");
    return report;
}

std::vector<tasks::Example> examples_from_manifest(const fs::path& manifest, const tasks::CorpusSpec& spec) {
    const fs::path base = manifest.parent_path();
    std::vector<tasks::Example> out;
    const auto pi = tasks::permutation(spec);
    std::vector<std::size_t> inverse(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) inverse[pi[i]] = i;
    for (const auto& r : tasks::read_manifest(manifest)) {
        tasks::Example ex;
        ex.id = r.id;
        ex.task = tasks::parse_toy_task(r.task);
        ex.text = parse_text(r.text, spec);
        ex.label = r.label;
        switch (ex.task) {
        case tasks::ToyTask::s2tt:
            for (auto t : ex.text) ex.symbols.push_back(inverse.at(t));
            break;
        case tasks::ToyTask::cls: break;
        default: ex.symbols = ex.text;
        }
        // The clean reference of SE and TTS is fully determined by the transcript.
        if (ex.task == tasks::ToyTask::se || ex.task == tasks::ToyTask::tts) ex.clean = tasks::render_tones(ex.symbols, spec);
        if (ex.task != tasks::ToyTask::tts) {
            if (r.wav_path.empty()) throw FormatError("record " + r.id + " has no wav_path");
            ex.input = dsp::read_wav(base / r.wav_path);
        }
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw FormatError(manifest.string() + " has no records");
    return out;
}

nlohmann::json cmd_corpus(const std::string& task, const Config& config, std::size_t count, tasks::Split split,
                          const fs::path& out_dir, const fs::path& codec_checkpoint) {
    const auto corpus = tasks::gen_corpus(config.corpus, tasks::parse_toy_task(task), count, config.seed, split);
    std::optional<codec::CodecModel> codec;
    if (!codec_checkpoint.empty()) codec.emplace(load_codec(config, codec_checkpoint));
    const auto path = tasks::write_manifest(corpus, config.corpus, out_dir, codec ? &*codec : nullptr);
    return {{"command", "corpus"}, {"task", task}, {"count", corpus.size()}, {"manifest", path.string()},
            {"split", split == tasks::Split::train ? "train" : "eval"}, {"seed", config.seed}};
}

nlohmann::json cmd_eval(const std::string& task, const Config& config, const Checkpoints& checkpoints,
                        const fs::path& manifest, const fs::path& out_file) {
    const bool noisy_asr = task == "noisy_asr";
    const tasks::ToyTask toy = noisy_asr ? tasks::ToyTask::se : tasks::parse_toy_task(task);
    const codec::CodecModel codec = load_codec(config, checkpoints.codec);
    const lm::LanguageModel lm = load_lm(config, checkpoints.lm);
    std::unique_ptr<vocoder::Predictor> predictor;
    if (!checkpoints.vocoder.empty()) predictor = load_vocoder(config, codec, checkpoints.vocoder);
    const tasks::Pipeline pipeline(config.corpus, codec, &lm, predictor.get());

    std::vector<tasks::Example> eval = manifest.empty()
                                           ? tasks::gen_corpus(config.corpus, toy, config.eval_count, config.seed, tasks::Split::eval)
                                           : examples_from_manifest(manifest, config.corpus);
    std::erase_if(eval, [&](const tasks::Example& ex) { return ex.task != toy; });
    if (eval.empty()) throw UsageError("no " + tasks::toy_task_name(toy) + " records to evaluate");
    nlohmann::json metrics = noisy_asr ? tasks::evaluate_transcripts(pipeline, eval) : tasks::evaluate(toy, pipeline, eval);
    metrics["command"] = "eval";
    metrics["config_hash"] = config_hash(config);
    metrics["seed"] = config.seed;
    if (noisy_asr) metrics["task"] = "noisy_asr";
    if (!out_file.empty()) {
        if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
        write_atomically(out_file, metrics.dump(2) + "\n");
    }
    return metrics;
}

Assertion parse_assertion(const std::string& text) {
    for (const char* op : {">=", "<=", "==", ">", "<"}) {
        const auto pos = text.find(op);
        if (pos == std::string::npos || pos == 0) continue;
        Assertion a{text.substr(0, pos), op, 0.0};
        const std::string value = text.substr(pos + std::string(op).size());
        try {
            std::size_t used = 0;
            a.value = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw UsageError("assertion '" + text + "' needs a numeric right-hand side");
        }
        return a;
    }
    throw UsageError("assertion '" + text + "' must look like metric>=value");
}

bool holds(const Assertion& a, const nlohmann::json& metrics) {
    if (!metrics.contains(a.metric) || !metrics.at(a.metric).is_number()) {
        throw UsageError("metric '" + a.metric + "' is not in the report");
    }
    const double v = metrics.at(a.metric).get<double>();
    if (a.op == ">=") return v >= a.value;
    if (a.op == "<=") return v <= a.value;
    if (a.op == ">") return v > a.value;
    if (a.op == "<") return v < a.value;
    return v == a.value;
}

nlohmann::json cmd_codec_roundtrip(const Config& config, const fs::path& codec_checkpoint, const fs::path& wav_in,
                                   const std::vector<std::size_t>& ns, const fs::path& out_dir) {
    if (ns.empty()) throw UsageError("give at least one quantizer count");
    for (auto n : ns) {
        if (n < 1 || n > config.codec.num_quantizers) {
            throw UsageError("quantizer count " + std::to_string(n) + " outside [1, " +
                             std::to_string(config.codec.num_quantizers) + "]");
        }
    }
    const dsp::Waveform in = dsp::read_wav(wav_in);
    if (in.empty()) throw UsageError(wav_in.string() + " holds no samples");
    const codec::CodecModel codec = load_codec(config, codec_checkpoint);
    fs::create_directories(out_dir);
    nlohmann::json results = nlohmann::json::array();
    bool monotone = true;
    double previous = -1e300;
    for (auto n : ns) {
        const dsp::Waveform out = codec.round_trip(in, n);
        const fs::path path = out_dir / ("roundtrip_n" + std::to_string(n) + ".wav");
        dsp::write_wav(path, out);
        const double snr = dsp::snr_db(in.samples, out.samples);
        monotone = monotone && snr >= previous - 0.1;
        previous = snr;
        results.push_back({{"n", n}, {"snr_db", snr}, {"samples", out.size()}, {"wav", path.string()}});
    }
    nlohmann::json report{{"command", "codec-roundtrip"}, {"input_samples", in.size()}, {"results", results},
                          {"monotone", monotone}, {"config_hash", config_hash(config)}};
    write_atomically(out_dir / "roundtrip.json", report.dump(2) + "\n");
    return report;
}

nlohmann::json cmd_chain(const std::string& plan_name, const Config& config, const Checkpoints& checkpoints,
                         const fs::path& wav_in, const fs::path& out_dir) {
    const tasks::ChainPlan plan = tasks::chain_plan(plan_name);
    const dsp::Waveform in = dsp::read_wav(wav_in);
    if (in.empty()) throw UsageError(wav_in.string() + " holds no samples");
    const codec::CodecModel codec = load_codec(config, checkpoints.codec);
    const lm::LanguageModel lm = load_lm(config, checkpoints.lm);
    const auto predictor = load_vocoder(config, codec, checkpoints.vocoder);
    const tasks::Pipeline pipeline(config.corpus, codec, &lm, predictor.get());
    const tasks::ChainResult result = tasks::chain_execute(plan, tasks::Artifact::from_audio(in), tasks::model_runner(pipeline));

    fs::create_directories(out_dir);
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step : result.steps) {
        std::string task(lm::task_name(step.task));
        task = task.substr(1, task.size() - 2);
        for (auto& ch : task) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        const std::string name = "step" + std::to_string(step.index) + "_" + task;
        nlohmann::json rec{{"index", step.index}, {"task", lm::task_name(step.task)},
                           {"decode", {{"length", step.output.diag.length},
                                       {"stop", step.output.diag.stop == lm::StopReason::eos ? "eos" : "cap"},
                                       {"looped", step.output.diag.looped}}}};
        if (step.output.modality == lm::Modality::text) {
            const std::string text = tasks::symbols_to_string(step.output.text, config.corpus);
            write_atomically(out_dir / (name + ".txt"), text + "\n");
            rec["text"] = text;
            rec["files"] = {name + ".txt"};
        } else {
            dsp::write_wav(out_dir / (name + ".wav"), step.output.audio);
            codec::CodeFrameSeq codes(step.output.codes.size(), 1, 1);
            for (std::size_t t = 0; t < step.output.codes.size(); ++t) codes.at(t, 0) = static_cast<std::uint16_t>(step.output.codes[t]);
            codec::write_codes(out_dir / (name + ".codes"), codes);
            rec["files"] = {name + ".wav", name + ".codes"};
        }
        steps.push_back(std::move(rec));
    }
    nlohmann::json report{{"command", "chain"}, {"plan", plan.name}, {"steps", steps}, {"looped", result.looped},
                          {"config_hash", config_hash(config)}};
    write_atomically(out_dir / "chain.json", report.dump(2) + "\n");
    return report;
}

} // namespace lgpt::cli
