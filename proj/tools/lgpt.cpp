// lgpt: train, evaluate and chain the toy speech models from the command line.
#include "lgpt/cli/commands.hpp"
#include "lgpt/error.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace lgpt;
using namespace lgpt::cli;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "Config file; defaults are used when omitted")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Overrides the config seed and LGPT_SEED");
}

Config resolve_config(const Common& c) {
    Config config = c.config_path.empty() ? Config{} : load_config(c.config_path);
    if (const char* env = std::getenv("LGPT_SEED")) {
        try {
            std::size_t used = 0;
            config.seed = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument(env);
        } catch (const std::exception&) {
            throw UsageError(std::string("LGPT_SEED='") + env + "' is not an unsigned integer");
        }
    }
    if (c.seed) config.seed = *c.seed;
    config.resolve();
    return config;
}

void print(nlohmann::json report) {
    report.erase("clips");
    report.erase("losses");
    std::cout << report.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy unified speech model toolkit"};
    app.require_subcommand(1);
    Common common;

    auto* train = app.add_subcommand("train", "Train the codec, lm or vocoder");
    std::string component;
    fs::path out_dir;
    TrainOptions topts;
    std::optional<std::size_t> steps;
    train->add_option("component", component, "codec, lm or vocoder")->required();
    train->add_option("--out", out_dir, "Output directory")->required();
    train->add_option("--steps", steps, "Overrides the configured step count");
    train->add_option("--codec", topts.codec, "Trained codec checkpoint (lm and vocoder)");
    train->add_option("--resume", topts.resume, "Start from this checkpoint's weights");
    train->add_option("--log-every", topts.log_every, "Print the loss every N steps");
    add_common(train, common);

    auto* eval = app.add_subcommand("eval", "Score a task and optionally assert on metrics");
    std::string task;
    Checkpoints ckpt;
    fs::path manifest, out_file;
    std::vector<std::string> asserts;
    eval->add_option("task", task, "asr, s2tt, cls, se, tts or noisy_asr")->required();
    eval->add_option("--codec", ckpt.codec, "Codec checkpoint")->required();
    eval->add_option("--lm", ckpt.lm, "Language model checkpoint")->required();
    eval->add_option("--vocoder", ckpt.vocoder, "Vocoder checkpoint (audio tasks)");
    eval->add_option("--manifest", manifest, "manifest.jsonl; a generated eval split is used when omitted");
    eval->add_option("--out", out_file, "Write the full report here");
    eval->add_option("--assert", asserts, "metric>=value; a failing assertion exits with 1");
    add_common(eval, common);

    auto* rt = app.add_subcommand("codec-roundtrip", "Encode and decode a WAV with n quantizers");
    fs::path wav_in;
    std::vector<std::size_t> ns;
    rt->add_option("--codec", ckpt.codec, "Codec checkpoint")->required();
    rt->add_option("--in", wav_in, "Input WAV")->required();
    rt->add_option("-n,--quantizers", ns, "Quantizer counts")->required();
    rt->add_option("--out", out_dir, "Output directory")->required();
    add_common(rt, common);

    auto* chain = app.add_subcommand("chain", "Run a task chain on one WAV");
    std::string plan;
    chain->add_option("plan", plan, "s2st, noise_robust_asr or personalized_tts")->required();
    chain->add_option("--codec", ckpt.codec, "Codec checkpoint")->required();
    chain->add_option("--lm", ckpt.lm, "Language model checkpoint")->required();
    chain->add_option("--vocoder", ckpt.vocoder, "Vocoder checkpoint")->required();
    chain->add_option("--in", wav_in, "Input WAV")->required();
    chain->add_option("--out", out_dir, "Output directory")->required();
    add_common(chain, common);

    auto* corpus = app.add_subcommand("corpus", "Write a toy corpus manifest");
    std::size_t count = 100;
    std::string split = "train";
    corpus->add_option("task", task, "asr, s2tt, cls, se or tts")->required();
    corpus->add_option("--count", count, "Utterances");
    corpus->add_option("--split", split, "train or eval")->check(CLI::IsMember({"train", "eval"}));
    corpus->add_option("--out", out_dir, "Output directory")->required();
    corpus->add_option("--codec", ckpt.codec, "Codec checkpoint; adds .codes files for se and tts");
    add_common(corpus, common);

    auto* show = app.add_subcommand("config", "Print the resolved config and its hash");
    add_common(show, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        const Config config = resolve_config(common);
        if (train->parsed()) {
            topts.steps = steps;
            print(cmd_train(component, config, out_dir, topts));
        } else if (eval->parsed()) {
            std::vector<Assertion> parsed;
            for (const auto& a : asserts) parsed.push_back(parse_assertion(a));
            const nlohmann::json metrics = cmd_eval(task, config, ckpt, manifest, out_file);
            print(metrics);
            bool ok = true;
            for (const auto& a : parsed) {
                const bool pass = holds(a, metrics);
                std::cerr << (pass ? "PASS " : "FAIL ") << a.metric << a.op << a.value << " (got "
                          << metrics.at(a.metric).dump() << ")\n";
                ok = ok && pass;
            }
            return ok ? kOk : kAssertionFailed;
        } else if (rt->parsed()) {
            print(cmd_codec_roundtrip(config, ckpt.codec, wav_in, ns, out_dir));
        } else if (chain->parsed()) {
            print(cmd_chain(plan, config, ckpt, wav_in, out_dir));
        } else if (corpus->parsed()) {
            print(cmd_corpus(task, config, count, split == "eval" ? tasks::Split::eval : tasks::Split::train, out_dir,
                             ckpt.codec));
        } else if (show->parsed()) {
            std::cout << "# hash " << config_hash(config) << "\n" << dump_config(config);
        }
        return kOk;
    } catch (const std::exception& e) {
        std::cerr << "lgpt: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
