#include "lgpt/error.hpp"
#include "lgpt/vocoder/vocoder.hpp"

namespace lgpt::vocoder {

VocoderTrainer::VocoderTrainer(Predictor& predictor, const codec::Codebooks& books, AdamConfig adam)
    : predictor_(predictor), books_(books), adam_(adam) {}

Var VocoderTrainer::batch_loss(Graph& g, const std::vector<const VocoderExample*>& batch) const {
    if (batch.empty()) throw Error("empty vocoder batch");
    Var total;
    for (const auto* ex : batch) {
        if (ex->codes.active_groups != books_.stages()) {
            throw Error("vocoder targets need all " + std::to_string(books_.stages()) + " code groups");
        }
        Var est = predictor_.predict(g, ex->codes.column(0), ex->cond);
        Var l = l_pre(g.constant(target_sum_embedding(ex->codes, books_)), est);
        total = total.valid() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

VocoderStepReport VocoderTrainer::step(const std::vector<const VocoderExample*>& batch) {
    Graph g(&predictor_.params());
    Var l = batch_loss(g, batch);
    adam_.update(predictor_.params(), g.backward(l));
    return {adam_.step(), l.value().item()};
}

double VocoderTrainer::measure(const std::vector<const VocoderExample*>& batch) const {
    Graph g(&predictor_.params());
    return batch_loss(g, batch).value().item();
}

MultistepTrainer::MultistepTrainer(MultistepBaseline& model, AdamConfig adam, std::uint64_t seed)
    : model_(model), adam_(adam), rng_(mix_seed(seed, 0x5e9)) {}

VocoderStepReport MultistepTrainer::step(const std::vector<const VocoderExample*>& batch) {
    if (batch.empty()) throw Error("empty vocoder batch");
    Graph g(&model_.params());
    Var total;
    for (const auto* ex : batch) {
        const std::size_t Q = ex->codes.active_groups;
        if (Q < 2) throw Error("multistep training needs at least two code groups");
        const std::size_t group = 1 + rng_.index(Q - 1);
        Var logits = model_.logits(g, ex->codes, group);
        std::vector<std::int64_t> labels;
        for (auto k : ex->codes.column(group)) labels.push_back(static_cast<std::int64_t>(k));
        const double w = 1.0 / static_cast<double>(labels.size() * batch.size());
        Var l = cross_entropy(logits, std::move(labels), std::vector<double>(ex->codes.frames, w));
        total = total.valid() ? add(total, l) : l;
    }
    adam_.update(model_.params(), g.backward(total));
    return {adam_.step(), total.value().item()};
}

} // namespace lgpt::vocoder
