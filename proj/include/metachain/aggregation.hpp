#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metachain/core.hpp"
#include "metachain/evaluation.hpp"
#include "metachain/meta_reasoner.hpp"

namespace metachain::aggregation {

/// Index of the majority answer among the non-abstaining entries, comparing
/// normalized strings; ties go to the group whose earliest entry comes
/// first. Returns the index of that earliest entry, or nothing when every
/// entry abstains. Shared by self-consistency and MCR+SC so both vote the
/// same way.
std::optional<std::size_t> majority_index(const std::vector<std::optional<std::string>>& answers);

/// The greedy chain's answer. When the greedy chain has a null answer, a
/// seeded uniform pick among the other chains' non-null answers substitutes
/// for it; with no candidates the prediction abstains.
Prediction self_ask_answer(const std::vector<ReasoningChain>& chains, std::uint64_t seed = 0);

/// Majority vote over the first k chains' final answers. Null and "Unknown"
/// chains do not vote. The returned answer keeps the surface form of the
/// earliest chain in the winning group.
Prediction self_consistency(const std::vector<ReasoningChain>& chains, int k);

/// Runs MCR once per chain set, then self-consistency over the r MCR
/// answers (abstains excluded, same tie-break). The winning run's
/// explanation is kept; if every run abstains, the first run's prediction
/// is returned as the abstain.
Prediction mcr_plus_sc(const std::string& question,
                       const std::vector<std::vector<ReasoningChain>>& chain_sets,
                       const meta_reasoner::MetaPromptSpec& spec, backend::Backend& backend,
                       ContextVariant variant = ContextVariant::qa_pairs);

/// Best-of-chains upper bound: every chain's final answer is scored (nulls
/// fall under the abstain rule) and the maximum wins.
double oracle_score(const std::vector<ReasoningChain>& chains, const Example& example,
                    const evaluation::MetricConfig& metric);

/// The prediction behind oracle_score: the earliest best-scoring chain's
/// answer, recorded with the oracle strategy.
Prediction oracle_prediction(const std::vector<ReasoningChain>& chains, const Example& example,
                             const evaluation::MetricConfig& metric);

}  // namespace metachain::aggregation
