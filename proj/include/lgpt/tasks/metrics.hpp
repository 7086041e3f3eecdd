#pragma once

#include <cstddef>
#include <vector>

namespace lgpt::tasks {

// Levenshtein distance with unit costs.
std::size_t edit_distance(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// Edit distance normalized by the reference length; an empty reference gives
// 0 for an empty hypothesis and 1 otherwise.
double token_error_rate(const std::vector<std::size_t>& hypothesis, const std::vector<std::size_t>& reference);

// Corpus-level edit statistics: error rate = total edits / total reference tokens.
struct EditTally {
    std::size_t edits = 0;
    std::size_t reference_tokens = 0;

    void add(const std::vector<std::size_t>& hypothesis, const std::vector<std::size_t>& reference);
    double error_rate() const;
    // 1 - error rate, floored at 0.
    double accuracy() const;
};

} // namespace lgpt::tasks
