#pragma once

#include "lgpt/numerics/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lgpt::lm {

// Task tokens, in registry order.
enum class TaskId : std::uint8_t { asr = 0, slu = 1, s2tt = 2, ser = 3, aac = 4, se = 5, tts = 6 };

inline constexpr std::size_t kTaskCount = 7;

enum class Modality : std::uint8_t { audio, text };

struct TaskSpec {
    TaskId id = TaskId::asr;
    Modality input = Modality::audio;
    Modality output = Modality::text;
    std::string_view domain; // human-readable target domain
};

const TaskSpec& task_spec(TaskId id);
const std::array<TaskSpec, kTaskCount>& task_registry();
std::string_view task_name(TaskId id);   // "<ASR>" etc.
std::optional<TaskId> parse_task(std::string_view name); // accepts "asr" or "<ASR>"

enum class TokenKind : std::uint8_t { text, audio, task };

struct TokenRef {
    TokenKind kind = TokenKind::text;
    std::size_t local = 0;
    bool operator==(const TokenRef&) const = default;
};

// Unified id space: text [0, N), audio [N, N + M), task [N + M, N + M + L).
// Text is byte level plus the start and end tokens at the top of its range.
class UnifiedVocab {
public:
    static constexpr std::size_t kBytes = 256;

    explicit UnifiedVocab(std::size_t audio_tokens = 1024, std::size_t text_tokens = kBytes + 2);

    std::size_t text_size() const { return text_; }      // N
    std::size_t audio_size() const { return audio_; }    // M
    std::size_t task_size() const { return kTaskCount; } // L
    std::size_t size() const { return text_size() + audio_size() + task_size(); }
    // Plain text symbols occupy [0, symbols()).
    std::size_t symbols() const { return text_ - 2; }

    std::size_t start() const { return text_ - 2; }
    std::size_t end() const { return text_ - 1; }

    std::size_t text(std::size_t byte) const;
    std::size_t audio(std::size_t code) const;
    std::size_t task(TaskId id) const;

    TokenRef classify(std::size_t id) const;
    std::size_t id(TokenRef ref) const;

    // Half-open id range of a task's outputs (ending token excluded).
    std::pair<std::size_t, std::size_t> output_range(Modality m) const;

    std::vector<std::size_t> encode_text(std::string_view s) const;
    // Bytes of text ids; throws RangeError on any non-byte id.
    std::string decode_text(const std::vector<std::size_t>& ids) const;
    std::vector<std::size_t> encode_audio(const std::vector<std::size_t>& codes) const;
    std::vector<std::size_t> decode_audio(const std::vector<std::size_t>& ids) const;

private:
    std::size_t audio_;
    std::size_t text_;
};

// [inputs, task, <S>, targets, <E>]. Inputs are either continuous feature rows
// (audio) or token ids (text). The loss mask is 1 on targets and <E>.
struct UnifiedSequence {
    TaskId task = TaskId::asr;
    Tensor features;                 // [T_u, F] audio input, empty for text input
    std::vector<std::size_t> tokens; // unified ids for every non-feature position
    std::size_t input_length = 0;    // T_u
    std::size_t target_length = 0;   // T_v, without <E>

    bool audio_input() const { return features.rank() == 2; }
    std::size_t feature_rows() const { return audio_input() ? input_length : 0; }
    std::size_t length() const { return feature_rows() + tokens.size(); }
    // Position of the task token.
    std::size_t task_position() const { return input_length; }
    std::vector<std::uint8_t> mask() const;
    // Label per position for next-token training: labels[t] = id at t + 1 when
    // that position is masked in, else -1.
    std::vector<std::int64_t> labels() const;
    // Id at position t; throws for feature positions.
    std::size_t token_at(std::size_t t) const;
    // The same sequence cut just after <S>, ready for generation.
    UnifiedSequence prefix() const;
};

// Targets are unified ids inside the task's output range.
UnifiedSequence build_sequence(const UnifiedVocab& vocab, TaskId task, const Tensor& features,
                               const std::vector<std::size_t>& targets);
UnifiedSequence build_sequence(const UnifiedVocab& vocab, TaskId task, const std::vector<std::size_t>& input_tokens,
                               const std::vector<std::size_t>& targets);

} // namespace lgpt::lm
