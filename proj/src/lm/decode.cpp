#include "lgpt/error.hpp"
#include "lgpt/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lgpt::lm {

bool has_loop(const std::vector<std::size_t>& tokens, std::size_t gram, std::size_t repeats) {
    const std::size_t span = gram * repeats;
    if (gram == 0 || tokens.size() < span) return false;
    // A run where every token equals the one `gram` places later covers `repeats` copies.
    std::size_t run = 0;
    for (std::size_t i = 0; i + gram < tokens.size(); ++i) {
        run = tokens[i] == tokens[i + gram] ? run + 1 : 0;
        if (run + gram >= span) return true;
    }
    return false;
}

double loop_ratio(const std::vector<DecodeDiag>& diags) {
    if (diags.empty()) throw Error("loop ratio of an empty list");
    const auto looped = std::count_if(diags.begin(), diags.end(), [](const DecodeDiag& d) { return d.looped; });
    return static_cast<double>(looped) / static_cast<double>(diags.size());
}

namespace {

std::size_t pick(const std::vector<double>& logits, const std::vector<std::size_t>& candidates,
                 const DecodeOptions& options, Rng& rng) {
    if (options.sampling == Sampling::greedy) {
        std::size_t best = candidates.front();
        for (auto c : candidates) {
            if (logits[c] > logits[best]) best = c;
        }
        return best;
    }
    std::vector<std::size_t> order = candidates;
    const std::size_t k = std::min(options.top_k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
    const double top = logits[order.front()];
    std::vector<double> p(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += p[i] = std::exp(logits[order[i]] - top);
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < k; ++i) {
        if ((u -= p[i]) < 0.0) return order[i];
    }
    return order[k - 1];
}

} // namespace

DecodeResult decode_autoregressive(const UnifiedSequence& prefix, const Scorer& scorer, std::size_t end_token,
                                   std::size_t max_length, const DecodeOptions& options) {
    if (prefix.length() > max_length) {
        throw RangeError("prefix of length " + std::to_string(prefix.length()) + " exceeds max length " +
                         std::to_string(max_length));
    }
    UnifiedSequence seq = prefix;
    Rng rng(options.seed);
    DecodeResult result;
    std::vector<std::size_t> candidates;
    bool stopped = false;
    while (result.tokens.size() < options.max_new_tokens && seq.length() < max_length) {
        const std::vector<double> logits = scorer(seq);
        if (candidates.empty()) {
            if (options.allowed_hi > options.allowed_lo) {
                for (std::size_t id = options.allowed_lo; id < options.allowed_hi; ++id) candidates.push_back(id);
                candidates.push_back(end_token);
            } else {
                candidates.resize(logits.size());
                std::iota(candidates.begin(), candidates.end(), std::size_t{0});
            }
        }
        for (auto c : candidates) {
            if (c >= logits.size()) throw RangeError("scorer returned too few logits");
        }
        const std::size_t next = pick(logits, candidates, options, rng);
        if (next == end_token) {
            stopped = true;
            break;
        }
        result.tokens.push_back(next);
        seq.tokens.push_back(next);
        ++seq.target_length;
    }
    result.diag.length = result.tokens.size();
    result.diag.stop = stopped ? StopReason::eos : StopReason::cap;
    result.diag.looped = has_loop(result.tokens);
    return result;
}

DecodeResult decode(const LanguageModel& model, const UnifiedSequence& prefix) {
    const auto& config = model.config();
    DecodeOptions options;
    options.max_new_tokens = config.max_new_tokens;
    options.sampling = config.sampling;
    options.top_k = config.top_k;
    options.seed = config.sampling_seed;
    std::tie(options.allowed_lo, options.allowed_hi) = model.vocab().output_range(task_spec(prefix.task).output);
    auto scorer = [&model](const UnifiedSequence& seq) { return model.next_logits(seq); };
    return decode_autoregressive(prefix, scorer, model.vocab().end(), config.max_length, options);
}

} // namespace lgpt::lm
