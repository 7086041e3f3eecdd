#include "lgpt/tasks/harness.hpp"

#include "lgpt/error.hpp"

namespace lgpt::tasks {

std::vector<dsp::Waveform> codec_clips(const CorpusSpec& spec, std::size_t count, std::uint64_t seed, Split split) {
    CorpusSpec s = spec;
    s.min_symbols = s.max_symbols = 10;
    std::vector<dsp::Waveform> out;
    for (auto& ex : gen_corpus(s, ToyTask::asr, count, seed, split)) out.push_back(std::move(ex.input));
    return out;
}

TrainLog train_codec(codec::CodecModel& model, const std::vector<dsp::Waveform>& clips, const CodecSchedule& schedule,
                     const Progress& progress) {
    if (clips.empty()) throw Error("no codec training clips");
    codec::CodecTrainer trainer(model, schedule.adam, schedule.seed);
    if (schedule.init_codebooks) {
        std::vector<Tensor> latents;
        for (std::size_t i = 0; i < std::min(schedule.init_clips, clips.size()); ++i) {
            latents.push_back(model.encode_latents(clips[i]));
        }
        trainer.init_codebooks(latents);
    }
    const std::vector<dsp::Waveform> probe(clips.begin(),
                                           clips.begin() + static_cast<std::ptrdiff_t>(std::min(schedule.probe_clips, clips.size())));
    TrainLog log;
    log.initial = trainer.measure(probe).total;
    Rng rng(mix_seed(schedule.seed, 0xc0dec));
    for (std::size_t s = 0; s < schedule.steps; ++s) {
        std::vector<dsp::Waveform> batch;
        for (std::size_t i = 0; i < schedule.batch; ++i) batch.push_back(clips[rng.index(clips.size())]);
        const auto r = trainer.step(batch);
        log.losses.push_back(r.loss.total);
        if (progress) progress(s + 1, r.loss.total);
    }
    log.final = trainer.measure(probe).total;
    return log;
}

TrainLog train_lm(lm::LanguageModel& model, const std::vector<lm::UnifiedSequence>& data, const LmSchedule& schedule,
                  const Progress& progress) {
    if (data.empty()) throw Error("no language model training sequences");
    std::vector<std::size_t> refresh;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (schedule.refresh_tasks.count(data[i].task)) refresh.push_back(i);
    }
    if (schedule.refresh_start < schedule.steps && refresh.empty()) {
        throw ConfigError("refresh stage has no sequences of the listed tasks");
    }
    lm::LmTrainer trainer(model, schedule.adam);
    Rng rng(mix_seed(schedule.seed, 0x1a));
    const std::size_t probe_n = std::min<std::size_t>(32, data.size());
    std::vector<const lm::UnifiedSequence*> probe;
    for (std::size_t i = 0; i < probe_n; ++i) probe.push_back(&data[i * data.size() / probe_n]);
    TrainLog log;
    log.initial = trainer.measure(probe);
    const std::size_t average_from = schedule.steps - std::min(schedule.average_last, schedule.steps);
    TensorMap mean;
    std::size_t averaged = 0;
    for (std::size_t s = 0; s < schedule.steps; ++s) {
        std::vector<const lm::UnifiedSequence*> batch;
        const bool refreshing = s >= schedule.refresh_start;
        for (std::size_t i = 0; i < schedule.batch; ++i) {
            batch.push_back(refreshing ? &data[refresh[rng.index(refresh.size())]] : &data[rng.index(data.size())]);
        }
        const auto r = trainer.step(batch);
        log.losses.push_back(r.loss);
        if (s >= average_from) {
            ++averaged;
            for (const auto& [name, value] : model.params().tensors()) {
                auto [it, fresh] = mean.try_emplace(name, value);
                if (fresh) continue;
                Tensor& m = it->second;
                for (std::size_t i = 0; i < m.size(); ++i) m[i] += (value[i] - m[i]) / static_cast<double>(averaged);
            }
        }
        if (progress) progress(s + 1, r.loss);
    }
    if (averaged > 1) {
        for (auto& [name, value] : model.params().tensors()) value = mean.at(name);
    }
    log.final = trainer.measure(probe);
    return log;
}

namespace {

std::vector<const vocoder::VocoderExample*> all_of(const std::vector<vocoder::VocoderExample>& data) {
    std::vector<const vocoder::VocoderExample*> out;
    for (const auto& ex : data) out.push_back(&ex);
    return out;
}

} // namespace

TrainLog train_vocoder(vocoder::Predictor& predictor, const codec::Codebooks& books,
                       const std::vector<vocoder::VocoderExample>& data, const VocoderSchedule& schedule,
                       const Progress& progress) {
    if (data.empty()) throw Error("no vocoder training examples");
    vocoder::VocoderTrainer trainer(predictor, books, schedule.adam);
    Rng rng(mix_seed(schedule.seed, 0x70c));
    TrainLog log;
    log.initial = trainer.measure(all_of(data));
    for (std::size_t s = 0; s < schedule.steps; ++s) {
        std::vector<const vocoder::VocoderExample*> batch;
        for (std::size_t i = 0; i < schedule.batch; ++i) batch.push_back(&data[rng.index(data.size())]);
        const auto r = trainer.step(batch);
        log.losses.push_back(r.loss);
        if (progress) progress(s + 1, r.loss);
    }
    log.final = trainer.measure(all_of(data));
    return log;
}

TrainLog train_multistep(vocoder::MultistepBaseline& model, const std::vector<vocoder::VocoderExample>& data,
                         const VocoderSchedule& schedule, const Progress& progress) {
    if (data.empty()) throw Error("no vocoder training examples");
    vocoder::MultistepTrainer trainer(model, schedule.adam, schedule.seed);
    Rng rng(mix_seed(schedule.seed, 0x3a5));
    TrainLog log;
    for (std::size_t s = 0; s < schedule.steps; ++s) {
        std::vector<const vocoder::VocoderExample*> batch;
        for (std::size_t i = 0; i < schedule.batch; ++i) batch.push_back(&data[rng.index(data.size())]);
        const auto r = trainer.step(batch);
        log.losses.push_back(r.loss);
        if (progress) progress(s + 1, r.loss);
    }
    if (!log.losses.empty()) {
        log.initial = log.losses.front();
        log.final = log.losses.back();
    }
    return log;
}

} // namespace lgpt::tasks
