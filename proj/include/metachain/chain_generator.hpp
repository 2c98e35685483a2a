#pragma once

#include <string>
#include <vector>

#include "metachain/backend.hpp"
#include "metachain/core.hpp"
#include "metachain/retrieval.hpp"

namespace metachain::chain_generator {

/// Marker strings of the decomposition surface format. These are the exact
/// strings the generation loop parses for, and every exemplar in a prompt
/// file must contain them verbatim.
struct DecompositionMarkers {
    std::string followup = "Follow up:";
    std::string intermediate_answer = "Intermediate answer:";
    std::string final_answer = "So the final answer is:";
    std::string need_followups = "Are follow up questions needed here:";
    std::string context_prefix = "Context";
};

struct DecompositionPromptSpec {
    std::string instruction;
    std::vector<std::string> exemplars;
    DecompositionMarkers markers;
};

struct ChainGenConfig {
    int k_chains = 5;
    double sample_temperature = 0.7;
    int max_steps = 8;  // generous cap; observed chains average ~2 steps
    int max_tokens = backend::kDefaultMaxTokens;
    retrieval::RetrievalConfig retrieval;
};

/// Where the rendered task block stops and the model takes over: either
/// right after a trailing "Follow up:" cue (asking for the next intermediate
/// question or the final answer), or after "Follow up: {q}\nIntermediate
/// answer:" (asking for the answer to the pending question).
struct PromptCue {
    enum class Kind { next_question, intermediate_answer };
    Kind kind = Kind::next_question;
    std::string pending_question;  // set for intermediate_answer

    static PromptCue next_question() { return {Kind::next_question, ""}; }
    static PromptCue answer_for(std::string q) { return {Kind::intermediate_answer, std::move(q)}; }
};

/// Task block layout: every evidence gathered so far as "Context{n}:" lines
/// (numbered from 1, all before the question), then "Question: {q}", then
/// "Are follow up questions needed here: Yes.", then the completed
/// "Follow up:"/"Intermediate answer:" line pairs, then any raw extra lines
/// the model emitted between steps, ending mid-sequence at the cue.
backend::StructuredPrompt build_decomposition_prompt(
    const DecompositionPromptSpec& spec, const std::string& question,
    const std::vector<ReasoningStep>& prior_steps, const std::vector<Evidence>& evidences,
    const PromptCue& cue = PromptCue::next_question(),
    const std::vector<std::string>& extra_lines = {});

/// Runs the decomposition loop: request the next line (stop "\n") and branch
/// on its marker; on a follow-up, retrieve top-1 evidence for it, rebuild the
/// prompt with the evidence prepended, and request the intermediate answer
/// (stop at "\nFollow up:" / "\nSo the final answer is:"). Ends when the
/// final-answer marker appears or max_steps steps are complete. The final
/// answer keeps its surface form except surrounding whitespace and one
/// trailing period. Transport/budget failures close the chain with an absent
/// final answer instead of propagating.
///
/// GenerationRequest.seed is id.seed + id.index, so scripted fixtures can
/// key distinct sampled draws while unconstrained fixtures match any draw.
ReasoningChain generate_chain(const std::string& question, const DecompositionPromptSpec& spec,
                              const ChainGenConfig& config, backend::Backend& backend,
                              retrieval::Retriever& retriever, double temperature,
                              ChainId id = {});

/// Chain 0 greedy, chains 1..k-1 sampled at config.sample_temperature, in
/// that order. Chain count always equals k_chains; a failed chain is
/// recorded with an absent final answer rather than aborting the set.
/// index_offset shifts the ChainId indices so additional independent sets
/// (set s uses offset s * k_chains) draw distinct sampling seeds.
std::vector<ReasoningChain> sample_chains(const std::string& question,
                                          const DecompositionPromptSpec& spec,
                                          const ChainGenConfig& config, backend::Backend& backend,
                                          retrieval::Retriever& retriever,
                                          const std::string& example_id = "",
                                          std::uint64_t seed = 0, int index_offset = 0);

}  // namespace metachain::chain_generator
