#include "lgpt/tasks/metrics.hpp"

#include <algorithm>

namespace lgpt::tasks {

std::size_t edit_distance(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

double token_error_rate(const std::vector<std::size_t>& hypothesis, const std::vector<std::size_t>& reference) {
    if (reference.empty()) return hypothesis.empty() ? 0.0 : 1.0;
    return static_cast<double>(edit_distance(hypothesis, reference)) / static_cast<double>(reference.size());
}

void EditTally::add(const std::vector<std::size_t>& hypothesis, const std::vector<std::size_t>& reference) {
    edits += edit_distance(hypothesis, reference);
    reference_tokens += reference.size();
}

double EditTally::error_rate() const {
    if (reference_tokens == 0) return edits == 0 ? 0.0 : 1.0;
    return static_cast<double>(edits) / static_cast<double>(reference_tokens);
}

double EditTally::accuracy() const { return std::max(0.0, 1.0 - error_rate()); }

} // namespace lgpt::tasks
