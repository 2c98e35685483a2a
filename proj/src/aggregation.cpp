#include "metachain/aggregation.hpp"

#include <algorithm>
#include <map>

#include "metachain/text.hpp"

namespace metachain::aggregation {

std::optional<std::size_t> majority_index(const std::vector<std::optional<std::string>>& answers) {
    struct Group {
        int count = 0;
        std::size_t first_index = 0;
    };
    std::map<std::string, Group> groups;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (is_abstain(answers[i])) continue;
        std::string normalized = evaluation::normalize_answer(*answers[i]);
        auto [it, inserted] = groups.emplace(normalized, Group{0, i});
        ++it->second.count;
    }
    if (groups.empty()) return std::nullopt;

    const Group* best = nullptr;
    for (const auto& [normalized, group] : groups) {
        if (best == nullptr || group.count > best->count ||
            (group.count == best->count && group.first_index < best->first_index)) {
            best = &group;
        }
    }
    return best->first_index;
}

namespace {

const ReasoningChain& greedy_chain(const std::vector<ReasoningChain>& chains) {
    auto it = std::find_if(chains.begin(), chains.end(),
                           [](const ReasoningChain& c) { return c.decode.greedy; });
    if (it == chains.end()) throw ConfigError("chain set has no greedy chain");
    return *it;
}

}  // namespace

Prediction self_ask_answer(const std::vector<ReasoningChain>& chains, std::uint64_t seed) {
    const ReasoningChain& greedy = greedy_chain(chains);

    Prediction prediction;
    prediction.strategy = Strategy::self_ask();

    if (greedy.final_answer.has_value()) {
        prediction.answer = greedy.final_answer;
        prediction.chains_used = {greedy.id};
        return prediction;
    }

    // Null greedy answer: substitute a random other chain's answer.
    std::vector<const ReasoningChain*> candidates;
    for (const ReasoningChain& chain : chains) {
        if (&chain != &greedy && chain.final_answer.has_value()) candidates.push_back(&chain);
    }
    if (candidates.empty()) {
        prediction.chains_used = {greedy.id};
        return prediction;  // everything null: abstain
    }
    const ReasoningChain* picked = candidates[uniform_pick(seed, candidates.size())];
    prediction.answer = picked->final_answer;
    prediction.chains_used = {picked->id};
    return prediction;
}

Prediction self_consistency(const std::vector<ReasoningChain>& chains, int k) {
    if (k < 1 || k > static_cast<int>(chains.size())) {
        throw ConfigError("self_consistency k=" + std::to_string(k) + " with " +
                          std::to_string(chains.size()) + " chains");
    }

    Prediction prediction;
    prediction.strategy = Strategy::sc(k);
    std::vector<std::optional<std::string>> answers;
    for (int i = 0; i < k; ++i) {
        answers.push_back(chains[i].final_answer);
        prediction.chains_used.push_back(chains[i].id);
    }
    if (auto winner = majority_index(answers)) {
        prediction.answer = answers[*winner];
    }
    return prediction;
}

Prediction mcr_plus_sc(const std::string& question,
                       const std::vector<std::vector<ReasoningChain>>& chain_sets,
                       const meta_reasoner::MetaPromptSpec& spec, backend::Backend& backend,
                       ContextVariant variant) {
    if (chain_sets.empty()) throw ConfigError("mcr_plus_sc needs at least one chain set");

    std::vector<Prediction> runs;
    runs.reserve(chain_sets.size());
    for (const auto& set : chain_sets) {
        runs.push_back(meta_reasoner::run_mcr(question, set, spec, backend, variant));
    }

    std::vector<std::optional<std::string>> answers;
    for (const Prediction& run : runs) answers.push_back(run.answer);

    auto winner = majority_index(answers);
    // With no valid votes the first run stands as the abstaining prediction,
    // which also keeps r=1 behaviorally identical to a plain MCR run.
    Prediction prediction = winner ? runs[*winner] : runs.front();
    prediction.strategy = Strategy::mcr_sc(static_cast<int>(chain_sets.size()), variant);
    prediction.chains_used.clear();
    for (const auto& set : chain_sets) {
        for (const ReasoningChain& chain : set) prediction.chains_used.push_back(chain.id);
    }
    return prediction;
}

double oracle_score(const std::vector<ReasoningChain>& chains, const Example& example,
                    const evaluation::MetricConfig& metric) {
    double best = evaluation::score_answer(std::nullopt, example, metric).score;
    for (const ReasoningChain& chain : chains) {
        best = std::max(best, evaluation::score_answer(chain.final_answer, example, metric).score);
    }
    return best;
}

Prediction oracle_prediction(const std::vector<ReasoningChain>& chains, const Example& example,
                             const evaluation::MetricConfig& metric) {
    Prediction prediction;
    prediction.strategy = Strategy::oracle();

    const ReasoningChain* best_chain = nullptr;
    double best_score = -1.0;
    for (const ReasoningChain& chain : chains) {
        double score = evaluation::score_answer(chain.final_answer, example, metric).score;
        if (score > best_score) {
            best_score = score;
            best_chain = &chain;
        }
    }
    if (best_chain != nullptr) {
        prediction.answer = best_chain->final_answer;
        prediction.chains_used = {best_chain->id};
    }
    return prediction;
}

}  // namespace metachain::aggregation
