#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metachain/backend.hpp"
#include "metachain/chain_generator.hpp"
#include "metachain/core.hpp"
#include "metachain/meta_reasoner.hpp"
#include "metachain/retrieval.hpp"

namespace metachain::scripting {

/// Planned content for one decomposition step.
struct PlannedStep {
    std::string question;
    std::string answer;
};

/// A reasoning chain to replay through the scripted backend. final_answer is
/// the surface text the model emits after the final-answer marker (so it may
/// carry a trailing period); leaving it absent scripts a chain that stalls
/// after its steps and closes without an answer.
struct PlannedChain {
    std::vector<PlannedStep> steps;
    std::optional<std::string> final_answer;
};

/// Registers fixtures so generate_chain reproduces the plan, and returns
/// the chain generate_chain will produce. Prompts are rebuilt with the same
/// builders the engine uses and must see the same retriever, otherwise the
/// evidence-bearing prompts hash differently. Fixtures are keyed on the
/// request's temperature and seed, so several distinct draws of one prompt
/// can coexist.
ReasoningChain script_chain(backend::ScriptedBackend& backend, retrieval::Retriever& retriever,
                            const chain_generator::DecompositionPromptSpec& spec,
                            const chain_generator::ChainGenConfig& config,
                            const std::string& question, ChainId id, double temperature,
                            const PlannedChain& plan);

/// Scripts a whole chain set the way sample_chains draws it: plan 0 greedy,
/// the rest at config.sample_temperature, indices starting at index_offset.
/// plans.size() must equal config.k_chains.
std::vector<ReasoningChain> script_chain_set(backend::ScriptedBackend& backend,
                                             retrieval::Retriever& retriever,
                                             const chain_generator::DecompositionPromptSpec& spec,
                                             const chain_generator::ChainGenConfig& config,
                                             const std::string& question,
                                             const std::string& example_id, std::uint64_t seed,
                                             const std::vector<PlannedChain>& plans,
                                             int index_offset = 0);

/// Registers the meta-reasoner completion for exactly the prompt
/// meta_answer will build over these chains. Pass the greedy chain alone to
/// script the single-chain variant.
void script_meta(backend::ScriptedBackend& backend, const meta_reasoner::MetaPromptSpec& spec,
                 const std::string& question, const std::vector<ReasoningChain>& chains,
                 ContextVariant variant, const std::string& completion);

}  // namespace metachain::scripting
