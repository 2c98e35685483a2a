#pragma once

#include <string>
#include <vector>

#include "metachain/backend.hpp"
#include "metachain/core.hpp"

namespace metachain::meta_reasoner {

enum class FeverousMode { corrections_only, all_facts };

/// Prompt for the second model that reads the multi-chain context and
/// produces an explanation plus final answer. Exemplars are rendered blocks
/// whose answer line starts with answer_marker. feverous_mode records which
/// explanation style the loaded exemplars use (corrections of false facts
/// only, the default, vs all facts).
struct MetaPromptSpec {
    std::string instruction =
        "Given a question and a context, answer the question step-by-step. "
        "If you are unsure, answer Unknown.";
    std::vector<std::string> exemplars;
    std::string answer_marker = "So the answer is:";
    FeverousMode feverous_mode = FeverousMode::corrections_only;
    int max_tokens = backend::kDefaultMaxTokens;
};

/// Flattens chains into context entries, chains in sampling order (greedy
/// first), steps in order. qa_pairs pairs each question with its
/// intermediate answer; evidence_pairs with its rendered evidence. Steps
/// missing the payload are skipped. Duplicate entries across chains are
/// retained.
MultiChainContext build_multichain_context(const std::vector<ReasoningChain>& chains,
                                           ContextVariant variant);

/// One context line: "{q} {a}" for qa_pairs, "{q} | {title}: {snippet}" for
/// evidence_pairs.
std::string render_context_entry(const ContextEntry& entry, ContextVariant variant);

/// Builds the full meta prompt. Task block:
///   Context:\n{lines}\nQuestion:\n{question}\nAnswer:
backend::StructuredPrompt build_meta_prompt(const std::string& question,
                                            const MultiChainContext& context,
                                            const MetaPromptSpec& spec);

/// Prompts the backend and parses the continuation at the first
/// answer_marker: text before it is the explanation, text after (trimmed,
/// one trailing period stripped) the answer. "Unknown" abstains. A
/// continuation without the marker yields an absent answer with the full
/// continuation as explanation; parsing never throws.
Prediction meta_answer(const std::string& question, const MultiChainContext& context,
                       const MetaPromptSpec& spec, backend::Backend& backend);

/// Meta-reasoning over the greedy chain only.
Prediction run_scr(const std::string& question, const std::vector<ReasoningChain>& chains,
                   const MetaPromptSpec& spec, backend::Backend& backend,
                   ContextVariant variant = ContextVariant::qa_pairs);

/// Meta-reasoning over all chains (the multi-chain context).
Prediction run_mcr(const std::string& question, const std::vector<ReasoningChain>& chains,
                   const MetaPromptSpec& spec, backend::Backend& backend,
                   ContextVariant variant = ContextVariant::qa_pairs);

}  // namespace metachain::meta_reasoner
