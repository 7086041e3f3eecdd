#include "lgpt/lm/vocab.hpp"

#include "lgpt/error.hpp"

#include <algorithm>
#include <cctype>

namespace lgpt::lm {

namespace {

const std::array<TaskSpec, kTaskCount> kRegistry{{
    {TaskId::asr, Modality::audio, Modality::text, "transcript text"},
    {TaskId::slu, Modality::audio, Modality::text, "intent label text"},
    {TaskId::s2tt, Modality::audio, Modality::text, "translated text"},
    {TaskId::ser, Modality::audio, Modality::text, "class label text"},
    {TaskId::aac, Modality::audio, Modality::text, "caption text"},
    {TaskId::se, Modality::audio, Modality::audio, "clean first-group codec tokens"},
    {TaskId::tts, Modality::text, Modality::audio, "first-group codec tokens"},
}};

constexpr std::array<std::string_view, kTaskCount> kNames{"<ASR>", "<SLU>", "<S2TT>", "<SER>",
                                                          "<AAC>", "<SE>",  "<TTS>"};

} // namespace

const std::array<TaskSpec, kTaskCount>& task_registry() { return kRegistry; }

const TaskSpec& task_spec(TaskId id) {
    const auto i = static_cast<std::size_t>(id);
    if (i >= kTaskCount) throw RangeError("unknown task id " + std::to_string(i));
    return kRegistry[i];
}

std::string_view task_name(TaskId id) { return kNames.at(static_cast<std::size_t>(task_spec(id).id)); }

std::optional<TaskId> parse_task(std::string_view name) {
    std::string key;
    for (char c : name) {
        if (c != '<' && c != '>') key += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    for (std::size_t i = 0; i < kTaskCount; ++i) {
        if ("<" + key + ">" == kNames[i]) return static_cast<TaskId>(i);
    }
    return std::nullopt;
}

UnifiedVocab::UnifiedVocab(std::size_t audio_tokens, std::size_t text_tokens)
    : audio_(audio_tokens), text_(text_tokens) {
    if (audio_tokens < 1) throw ConfigError("audio vocabulary must not be empty");
    if (text_tokens < 3 || text_tokens > kBytes + 2) throw ConfigError("text vocabulary must hold 3..258 tokens");
}

std::size_t UnifiedVocab::text(std::size_t byte) const {
    if (byte >= text_size()) throw RangeError("text token " + std::to_string(byte) + " outside [0, " +
                                              std::to_string(text_size()) + ")");
    return byte;
}

std::size_t UnifiedVocab::audio(std::size_t code) const {
    if (code >= audio_) throw RangeError("audio token " + std::to_string(code) + " outside [0, " +
                                         std::to_string(audio_) + ")");
    return text_size() + code;
}

std::size_t UnifiedVocab::task(TaskId id) const {
    return text_size() + audio_ + static_cast<std::size_t>(task_spec(id).id);
}

TokenRef UnifiedVocab::classify(std::size_t id) const {
    if (id < text_size()) return {TokenKind::text, id};
    if (id < text_size() + audio_) return {TokenKind::audio, id - text_size()};
    if (id < size()) return {TokenKind::task, id - text_size() - audio_};
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
}

std::size_t UnifiedVocab::id(TokenRef ref) const {
    switch (ref.kind) {
    case TokenKind::text: return text(ref.local);
    case TokenKind::audio: return audio(ref.local);
    default:
        if (ref.local >= kTaskCount) throw RangeError("task token " + std::to_string(ref.local) + " out of range");
        return task(static_cast<TaskId>(ref.local));
    }
}

std::pair<std::size_t, std::size_t> UnifiedVocab::output_range(Modality m) const {
    if (m == Modality::text) return {0, symbols()};
    return {text_size(), text_size() + audio_};
}

std::vector<std::size_t> UnifiedVocab::encode_text(std::string_view s) const {
    std::vector<std::size_t> out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (c >= symbols()) throw RangeError("byte " + std::to_string(c) + " outside the text vocabulary");
        out.push_back(c);
    }
    return out;
}

std::string UnifiedVocab::decode_text(const std::vector<std::size_t>& ids) const {
    std::string out;
    for (auto id : ids) {
        if (id >= symbols()) throw RangeError("token " + std::to_string(id) + " is not a text byte");
        out += static_cast<char>(id);
    }
    return out;
}

std::vector<std::size_t> UnifiedVocab::encode_audio(const std::vector<std::size_t>& codes) const {
    std::vector<std::size_t> out;
    out.reserve(codes.size());
    for (auto c : codes) out.push_back(audio(c));
    return out;
}

std::vector<std::size_t> UnifiedVocab::decode_audio(const std::vector<std::size_t>& ids) const {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (auto id : ids) {
        const TokenRef ref = classify(id);
        if (ref.kind != TokenKind::audio) throw RangeError("token " + std::to_string(id) + " is not an audio token");
        out.push_back(ref.local);
    }
    return out;
}

std::vector<std::uint8_t> UnifiedSequence::mask() const {
    std::vector<std::uint8_t> m(length(), 0);
    const std::size_t first = input_length + 2;
    if (tokens.empty() || first + target_length >= m.size()) return m;
    for (std::size_t t = first; t <= first + target_length; ++t) m[t] = 1;
    return m;
}

std::vector<std::int64_t> UnifiedSequence::labels() const {
    const auto m = mask();
    std::vector<std::int64_t> out(length(), -1);
    for (std::size_t t = 0; t + 1 < m.size(); ++t) {
        if (m[t + 1]) out[t] = static_cast<std::int64_t>(token_at(t + 1));
    }
    return out;
}

std::size_t UnifiedSequence::token_at(std::size_t t) const {
    if (t < feature_rows()) throw RangeError("position " + std::to_string(t) + " holds audio features");
    if (t >= length()) throw RangeError("position " + std::to_string(t) + " past the sequence end");
    return tokens[t - feature_rows()];
}

UnifiedSequence UnifiedSequence::prefix() const {
    UnifiedSequence p = *this;
    p.tokens.resize(input_length + 2 - feature_rows());
    p.target_length = 0;
    return p;
}

namespace {

void check_targets(const UnifiedVocab& vocab, TaskId task, const std::vector<std::size_t>& targets) {
    const auto [lo, hi] = vocab.output_range(task_spec(task).output);
    for (auto id : targets) {
        if (id < lo || id >= hi) {
            throw RangeError("target token " + std::to_string(id) + " outside " + std::string(task_name(task)) +
                             " output range [" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
        }
    }
}

void append_tail(const UnifiedVocab& vocab, UnifiedSequence& seq, const std::vector<std::size_t>& targets) {
    seq.tokens.push_back(vocab.task(seq.task));
    seq.tokens.push_back(vocab.start());
    seq.tokens.insert(seq.tokens.end(), targets.begin(), targets.end());
    seq.tokens.push_back(vocab.end());
    seq.target_length = targets.size();
}

} // namespace

UnifiedSequence build_sequence(const UnifiedVocab& vocab, TaskId task, const Tensor& features,
                               const std::vector<std::size_t>& targets) {
    if (task_spec(task).input != Modality::audio) {
        throw Error(std::string(task_name(task)) + " takes text input, got audio features");
    }
    if (features.rank() != 2 || features.rows() == 0) {
        throw ShapeError("audio input must be a nonempty [T, F] matrix, got " + shape_string(features.shape()));
    }
    check_targets(vocab, task, targets);
    UnifiedSequence seq;
    seq.task = task;
    seq.features = features;
    seq.input_length = features.rows();
    append_tail(vocab, seq, targets);
    return seq;
}

UnifiedSequence build_sequence(const UnifiedVocab& vocab, TaskId task, const std::vector<std::size_t>& input_tokens,
                               const std::vector<std::size_t>& targets) {
    if (task_spec(task).input != Modality::text) {
        throw Error(std::string(task_name(task)) + " takes audio input, got text tokens");
    }
    if (input_tokens.empty()) throw Error("text input must not be empty");
    for (auto id : input_tokens) {
        if (id >= vocab.symbols()) throw RangeError("input token " + std::to_string(id) + " is not a text byte");
    }
    check_targets(vocab, task, targets);
    UnifiedSequence seq;
    seq.task = task;
    seq.tokens = input_tokens;
    seq.input_length = input_tokens.size();
    append_tail(vocab, seq, targets);
    return seq;
}

} // namespace lgpt::lm
