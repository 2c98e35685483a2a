#include "metachain/chain_generator.hpp"

#include "metachain/text.hpp"

namespace metachain::chain_generator {

backend::StructuredPrompt build_decomposition_prompt(
    const DecompositionPromptSpec& spec, const std::string& question,
    const std::vector<ReasoningStep>& prior_steps, const std::vector<Evidence>& evidences,
    const PromptCue& cue, const std::vector<std::string>& extra_lines) {
    const DecompositionMarkers& m = spec.markers;

    std::string task;
    int context_no = 1;
    for (const Evidence& e : evidences) {
        task += m.context_prefix + std::to_string(context_no++) + ": " + e.rendered() + "\n";
    }
    task += "Question: " + question + "\n";
    task += m.need_followups + " Yes.\n";
    for (const ReasoningStep& step : prior_steps) {
        task += m.followup + " " + step.intermediate_question + "\n";
        task += m.intermediate_answer + " " + step.intermediate_answer + "\n";
    }
    for (const std::string& line : extra_lines) {
        task += line + "\n";
    }
    if (cue.kind == PromptCue::Kind::next_question) {
        task += m.followup;
    } else {
        task += m.followup + " " + cue.pending_question + "\n" + m.intermediate_answer;
    }

    backend::StructuredPrompt prompt;
    prompt.instruction = spec.instruction;
    prompt.exemplars = spec.exemplars;
    prompt.task_block = std::move(task);
    return prompt;
}

namespace {

// Outcome of one next-line request.
struct NextLine {
    enum class Kind { followup, final_answer, need_followups, unparseable };
    Kind kind = Kind::unparseable;
    std::string text;             // follow-up question or final answer
    std::string transcript_line;  // canonical form for raw_transcript
};

NextLine parse_next_line(const std::string& raw, const DecompositionMarkers& m) {
    std::string line = text::trim(raw);
    NextLine out;

    // A final answer wins wherever the marker appears; a cue-led model may
    // emit it directly after the trailing "Follow up:".
    if (auto pos = line.find(m.final_answer); pos != std::string::npos) {
        out.kind = NextLine::Kind::final_answer;
        out.text = text::strip_answer_decorations(line.substr(pos + m.final_answer.size()));
        out.transcript_line = line.substr(pos);
        return out;
    }
    if (text::starts_with(line, m.need_followups)) {
        out.kind = NextLine::Kind::need_followups;
        out.transcript_line = line;
        return out;
    }
    // The trailing cue already carries the marker, but tolerate a model (or
    // fixture) that repeats it.
    if (text::starts_with(line, m.followup)) {
        line = text::trim(line.substr(m.followup.size()));
    }
    if (line.empty()) return out;  // unparseable
    out.kind = NextLine::Kind::followup;
    out.text = line;
    out.transcript_line = m.followup + " " + line;
    return out;
}

}  // namespace

ReasoningChain generate_chain(const std::string& question, const DecompositionPromptSpec& spec,
                              const ChainGenConfig& config, backend::Backend& backend,
                              retrieval::Retriever& retriever, double temperature, ChainId id) {
    ReasoningChain chain;
    chain.id = id;
    chain.decode = temperature == 0.0 ? DecodeSpec::make_greedy() : DecodeSpec::sampled(temperature);

    auto request_for = [&](const backend::StructuredPrompt& prompt,
                           std::vector<std::string> stops) {
        backend::GenerationRequest req;
        req.prompt = backend::trim_prompt(prompt, backend.profile(), config.max_tokens);
        req.temperature = temperature;
        req.max_tokens = config.max_tokens;
        req.stop_sequences = std::move(stops);
        req.seed = static_cast<std::int64_t>(id.seed + static_cast<std::uint64_t>(id.index));
        return req;
    };

    std::vector<Evidence> evidences;
    try {
        chain.question_evidence = retriever.retrieve_for_chain_start(question);
        if (chain.question_evidence.has_value()) evidences.push_back(*chain.question_evidence);

        while (static_cast<int>(chain.steps.size()) < config.max_steps) {
            // Ask for the next line and branch on its marker. A line like
            // "Are follow up questions needed here: No." is kept in the
            // transcript and re-queried once, treating whatever final-answer
            // line follows as the chain answer.
            std::vector<std::string> transient_lines;
            NextLine next;
            for (int attempt = 0; attempt < 2; ++attempt) {
                auto prompt = build_decomposition_prompt(spec, question, chain.steps, evidences,
                                                         PromptCue::next_question(), transient_lines);
                next = parse_next_line(backend.generate(request_for(prompt, {"\n"})),
                                       spec.markers);
                if (next.kind != NextLine::Kind::need_followups) break;
                chain.raw_transcript += next.transcript_line + "\n";
                transient_lines.push_back(next.transcript_line);
            }

            if (next.kind == NextLine::Kind::final_answer) {
                chain.final_answer = next.text;
                chain.raw_transcript += next.transcript_line + "\n";
                break;
            }
            if (next.kind != NextLine::Kind::followup) {
                break;  // unparseable or stuck: null prediction
            }

            const std::string& q = next.text;
            auto results = retriever.retrieve(q);
            std::optional<Evidence> evidence;
            if (!results.empty()) {
                evidence = results.front();
                evidences.push_back(*evidence);
            }

            auto prompt = build_decomposition_prompt(spec, question, chain.steps, evidences,
                                                     PromptCue::answer_for(q));
            std::string answer = text::trim(backend.generate(request_for(
                prompt, {"\n" + spec.markers.followup, "\n" + spec.markers.final_answer})));
            if (text::starts_with(answer, spec.markers.intermediate_answer)) {
                answer = text::trim(answer.substr(spec.markers.intermediate_answer.size()));
            }

            chain.raw_transcript += spec.markers.followup + " " + q + "\n";
            chain.raw_transcript += spec.markers.intermediate_answer + " " + answer + "\n";
            chain.steps.push_back({q, std::move(evidence), std::move(answer)});
        }
    } catch (const TransportError&) {
        chain.final_answer.reset();  // operational failure: null prediction
    } catch (const BudgetError&) {
        chain.final_answer.reset();
    }
    return chain;
}

std::vector<ReasoningChain> sample_chains(const std::string& question,
                                          const DecompositionPromptSpec& spec,
                                          const ChainGenConfig& config, backend::Backend& backend,
                                          retrieval::Retriever& retriever,
                                          const std::string& example_id, std::uint64_t seed,
                                          int index_offset) {
    if (config.k_chains < 1) throw ConfigError("k_chains must be >= 1");
    std::vector<ReasoningChain> chains;
    chains.reserve(config.k_chains);
    for (int i = 0; i < config.k_chains; ++i) {
        double temperature = i == 0 ? 0.0 : config.sample_temperature;
        chains.push_back(generate_chain(question, spec, config, backend, retriever, temperature,
                                        ChainId{example_id, seed, index_offset + i}));
    }
    return chains;
}

}  // namespace metachain::chain_generator
