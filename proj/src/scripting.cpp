#include "metachain/scripting.hpp"

#include "metachain/text.hpp"

namespace metachain::scripting {

using chain_generator::build_decomposition_prompt;
using chain_generator::PromptCue;

ReasoningChain script_chain(backend::ScriptedBackend& backend, retrieval::Retriever& retriever,
                            const chain_generator::DecompositionPromptSpec& spec,
                            const chain_generator::ChainGenConfig& config,
                            const std::string& question, ChainId id, double temperature,
                            const PlannedChain& plan) {
    ReasoningChain chain;
    chain.id = id;
    chain.decode =
        temperature == 0.0 ? DecodeSpec::make_greedy() : DecodeSpec::sampled(temperature);

    auto add = [&](const backend::StructuredPrompt& prompt, const std::string& completion) {
        backend::Fixture fixture;
        fixture.prompt = backend::trim_prompt(prompt, backend.profile(), config.max_tokens);
        fixture.completion = completion;
        fixture.temperature = temperature;
        fixture.seed = static_cast<std::int64_t>(id.seed + static_cast<std::uint64_t>(id.index));
        backend.add_fixture(std::move(fixture));
    };

    const auto& m = spec.markers;
    std::vector<Evidence> evidences;
    chain.question_evidence = retriever.retrieve_for_chain_start(question);
    if (chain.question_evidence) evidences.push_back(*chain.question_evidence);

    for (const PlannedStep& step : plan.steps) {
        add(build_decomposition_prompt(spec, question, chain.steps, evidences,
                                       PromptCue::next_question()),
            " " + step.question);

        auto results = retriever.retrieve(step.question);
        std::optional<Evidence> evidence;
        if (!results.empty()) {
            evidence = results.front();
            evidences.push_back(*evidence);
        }
        add(build_decomposition_prompt(spec, question, chain.steps, evidences,
                                       PromptCue::answer_for(step.question)),
            " " + step.answer);

        chain.raw_transcript += m.followup + " " + step.question + "\n";
        chain.raw_transcript += m.intermediate_answer + " " + step.answer + "\n";
        chain.steps.push_back({step.question, std::move(evidence), step.answer});
    }

    if (static_cast<int>(plan.steps.size()) < config.max_steps) {
        auto prompt = build_decomposition_prompt(spec, question, chain.steps, evidences,
                                                 PromptCue::next_question());
        if (plan.final_answer) {
            add(prompt, " " + m.final_answer + " " + *plan.final_answer);
            chain.final_answer = text::strip_answer_decorations(*plan.final_answer);
            chain.raw_transcript += m.final_answer + " " + text::trim(*plan.final_answer) + "\n";
        } else {
            // An empty continuation is unparseable; the chain closes null.
            add(prompt, "");
        }
    }
    return chain;
}

std::vector<ReasoningChain> script_chain_set(backend::ScriptedBackend& backend,
                                             retrieval::Retriever& retriever,
                                             const chain_generator::DecompositionPromptSpec& spec,
                                             const chain_generator::ChainGenConfig& config,
                                             const std::string& question,
                                             const std::string& example_id, std::uint64_t seed,
                                             const std::vector<PlannedChain>& plans,
                                             int index_offset) {
    if (static_cast<int>(plans.size()) != config.k_chains) {
        throw ConfigError("script_chain_set: " + std::to_string(plans.size()) + " plans for k=" +
                          std::to_string(config.k_chains));
    }
    std::vector<ReasoningChain> chains;
    chains.reserve(plans.size());
    for (std::size_t i = 0; i < plans.size(); ++i) {
        double temperature = i == 0 ? 0.0 : config.sample_temperature;
        chains.push_back(script_chain(backend, retriever, spec, config, question,
                                      ChainId{example_id, seed, index_offset + static_cast<int>(i)},
                                      temperature, plans[i]));
    }
    return chains;
}

void script_meta(backend::ScriptedBackend& backend, const meta_reasoner::MetaPromptSpec& spec,
                 const std::string& question, const std::vector<ReasoningChain>& chains,
                 ContextVariant variant, const std::string& completion) {
    auto context = meta_reasoner::build_multichain_context(chains, variant);
    auto prompt = meta_reasoner::build_meta_prompt(question, context, spec);
    backend::Fixture fixture;
    fixture.prompt = backend::trim_prompt(prompt, backend.profile(), spec.max_tokens);
    fixture.completion = completion;
    backend.add_fixture(std::move(fixture));
}

}  // namespace metachain::scripting
