#include "metachain/meta_reasoner.hpp"

#include <algorithm>

#include "metachain/text.hpp"

namespace metachain::meta_reasoner {

MultiChainContext build_multichain_context(const std::vector<ReasoningChain>& chains,
                                           ContextVariant variant) {
    MultiChainContext context;
    context.variant = variant;
    for (const ReasoningChain& chain : chains) {
        for (const ReasoningStep& step : chain.steps) {
            if (variant == ContextVariant::qa_pairs) {
                if (step.intermediate_answer.empty()) continue;
                context.entries.push_back({step.intermediate_question, step.intermediate_answer});
            } else {
                if (!step.evidence.has_value()) continue;
                context.entries.push_back({step.intermediate_question, step.evidence->rendered()});
            }
        }
    }
    return context;
}

std::string render_context_entry(const ContextEntry& entry, ContextVariant variant) {
    if (variant == ContextVariant::qa_pairs) {
        return entry.question + " " + entry.payload;
    }
    return entry.question + " | " + entry.payload;
}

backend::StructuredPrompt build_meta_prompt(const std::string& question,
                                            const MultiChainContext& context,
                                            const MetaPromptSpec& spec) {
    std::string lines;
    for (std::size_t i = 0; i < context.entries.size(); ++i) {
        if (i) lines.push_back('\n');
        lines += render_context_entry(context.entries[i], context.variant);
    }

    backend::StructuredPrompt prompt;
    prompt.instruction = spec.instruction;
    prompt.exemplars = spec.exemplars;
    prompt.task_block = "Context:\n" + lines + "\nQuestion:\n" + question + "\nAnswer:";
    return prompt;
}

Prediction meta_answer(const std::string& question, const MultiChainContext& context,
                       const MetaPromptSpec& spec, backend::Backend& backend) {
    auto prompt = build_meta_prompt(question, context, spec);

    backend::GenerationRequest request;
    request.prompt = backend::trim_prompt(prompt, backend.profile(), spec.max_tokens);
    request.temperature = 0.0;
    request.max_tokens = spec.max_tokens;
    request.stop_sequences = {"\n" + prompt.block_separator + "\n", "\nQuestion:", "\nContext:"};
    std::string continuation = backend.generate(request);

    Prediction prediction;
    prediction.strategy = Strategy::mcr(context.variant);

    auto pos = continuation.find(spec.answer_marker);
    if (pos == std::string::npos) {
        prediction.explanation = continuation;
        return prediction;  // abstain: no parseable answer
    }
    std::string explanation = text::trim(continuation.substr(0, pos));
    if (!explanation.empty()) prediction.explanation = explanation;
    prediction.answer =
        text::strip_answer_decorations(continuation.substr(pos + spec.answer_marker.size()));
    return prediction;
}

namespace {

const ReasoningChain* find_greedy(const std::vector<ReasoningChain>& chains) {
    auto it = std::find_if(chains.begin(), chains.end(),
                           [](const ReasoningChain& c) { return c.decode.greedy; });
    return it == chains.end() ? nullptr : &*it;
}

}  // namespace

Prediction run_scr(const std::string& question, const std::vector<ReasoningChain>& chains,
                   const MetaPromptSpec& spec, backend::Backend& backend, ContextVariant variant) {
    const ReasoningChain* greedy = find_greedy(chains);
    if (greedy == nullptr) throw ConfigError("run_scr needs a greedy chain in the set");

    auto context = build_multichain_context({*greedy}, variant);
    Prediction prediction = meta_answer(question, context, spec, backend);
    prediction.strategy = Strategy::scr(variant);
    prediction.chains_used = {greedy->id};
    return prediction;
}

Prediction run_mcr(const std::string& question, const std::vector<ReasoningChain>& chains,
                   const MetaPromptSpec& spec, backend::Backend& backend, ContextVariant variant) {
    if (chains.empty()) throw ConfigError("run_mcr needs at least one chain");

    auto context = build_multichain_context(chains, variant);
    Prediction prediction = meta_answer(question, context, spec, backend);
    prediction.strategy = Strategy::mcr(variant);
    for (const ReasoningChain& chain : chains) prediction.chains_used.push_back(chain.id);
    return prediction;
}

}  // namespace metachain::meta_reasoner
