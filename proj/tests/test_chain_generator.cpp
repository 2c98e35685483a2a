#include "doctest.h"

#include <map>
#include <string>
#include <vector>

#include "metachain/chain_generator.hpp"
#include "metachain/scripting.hpp"

using namespace metachain;
using namespace metachain::chain_generator;

namespace {

DecompositionPromptSpec test_spec() {
    DecompositionPromptSpec spec;
    spec.instruction = "Answer the question by decomposing it.";
    spec.exemplars = {
        "Question: Example?\n"
        "Are follow up questions needed here: Yes.\n"
        "Follow up: Sub?\n"
        "Intermediate answer: Part.\n"
        "So the final answer is: Whole."};
    return spec;
}

class MapRetriever : public retrieval::Retriever {
  public:
    MapRetriever() { config_.backend = EvidenceSource::fixture; }

    void add(const std::string& query, const std::string& title, const std::string& snippet) {
        auto& list = map_[query];
        list.push_back(Evidence{title, snippet, EvidenceSource::fixture,
                                static_cast<int>(list.size()) + 1});
    }
    void disable_original_question() { config_.retrieve_for_original_question = false; }

    std::vector<Evidence> retrieve(const std::string& query) override {
        auto it = map_.find(query);
        return it == map_.end() ? std::vector<Evidence>{} : it->second;
    }
    const retrieval::RetrievalConfig& config() const override { return config_; }

  private:
    retrieval::RetrievalConfig config_;
    std::map<std::string, std::vector<Evidence>> map_;
};

class RecordingBackend : public backend::Backend {
  public:
    explicit RecordingBackend(backend::Backend& inner) : inner_(inner) {}

    std::string generate(const backend::GenerationRequest& request) override {
        requests.push_back(request);
        return inner_.generate(request);
    }
    const backend::BackendProfile& profile() const override { return inner_.profile(); }

    std::vector<backend::GenerationRequest> requests;

  private:
    backend::Backend& inner_;
};

class ThrowingBackend : public backend::Backend {
  public:
    std::string generate(const backend::GenerationRequest&) override {
        throw TransportError("scripted outage");
    }
    const backend::BackendProfile& profile() const override { return profile_; }

  private:
    backend::BackendProfile profile_{"throwing", 1 << 20, "whitespace"};
};

std::string rendered(const DecompositionPromptSpec& spec, const std::string& question,
                     const std::vector<ReasoningStep>& steps, const std::vector<Evidence>& evidences,
                     const PromptCue& cue = PromptCue::next_question(),
                     const std::vector<std::string>& extra = {}) {
    return build_decomposition_prompt(spec, question, steps, evidences, cue, extra).render();
}

}  // namespace

TEST_CASE("decomposition task block: contexts, question, then the step ledger") {
    auto spec = test_spec();
    std::vector<Evidence> evidences{
        {"Race 1921", "Albert won the 1921 race.", EvidenceSource::fixture, 1},
        {"Albert", "Albert was a Belgian driver.", EvidenceSource::fixture, 1}};
    std::vector<ReasoningStep> steps{{"Who is Albert?", evidences[1], "A Belgian driver."}};

    auto prompt = build_decomposition_prompt(spec, "Who won in 1921?", steps, evidences);
    CHECK(prompt.task_block ==
          "Context1: Race 1921: Albert won the 1921 race.\n"
          "Context2: Albert: Albert was a Belgian driver.\n"
          "Question: Who won in 1921?\n"
          "Are follow up questions needed here: Yes.\n"
          "Follow up: Who is Albert?\n"
          "Intermediate answer: A Belgian driver.\n"
          "Follow up:");
    CHECK(prompt.instruction == spec.instruction);
    CHECK(prompt.exemplars == spec.exemplars);
    CHECK(prompt.render() == spec.instruction + "\n#\n" + spec.exemplars[0] + "\n#\n" +
                                 prompt.task_block);

    // Every context line sits before the question line.
    auto question_pos = prompt.task_block.find("Question:");
    CHECK(prompt.task_block.rfind("Context") < question_pos);

    auto answering = build_decomposition_prompt(spec, "Q?", {}, {},
                                                PromptCue::answer_for("Pending sub?"));
    CHECK(answering.task_block ==
          "Question: Q?\n"
          "Are follow up questions needed here: Yes.\n"
          "Follow up: Pending sub?\n"
          "Intermediate answer:");

    auto with_extra = build_decomposition_prompt(
        spec, "Q?", {}, {}, PromptCue::next_question(),
        {"Are follow up questions needed here: Yes."});
    CHECK(with_extra.task_block ==
          "Question: Q?\n"
          "Are follow up questions needed here: Yes.\n"
          "Are follow up questions needed here: Yes.\n"
          "Follow up:");
}

TEST_CASE("generate_chain walks follow-ups with per-step retrieval") {
    backend::ScriptedBackend scripted;
    MapRetriever retriever;
    retriever.add("Who won in 1921?", "Race 1921", "Albert won the 1921 race.");
    retriever.add("Who is Albert?", "Albert", "Albert was a Belgian driver.");
    auto spec = test_spec();
    ChainGenConfig config;

    const std::string question = "Who won in 1921?";
    Evidence qe{"Race 1921", "Albert won the 1921 race.", EvidenceSource::fixture, 1};
    Evidence e1{"Albert", "Albert was a Belgian driver.", EvidenceSource::fixture, 1};

    scripted.add_fixture(rendered(spec, question, {}, {qe}), " Who is Albert?");
    // The answer request stops at a trailing follow-up the model tried to run
    // ahead with.
    scripted.add_fixture(
        rendered(spec, question, {}, {qe, e1}, PromptCue::answer_for("Who is Albert?")),
        " A Belgian driver.\nFollow up: runaway");
    std::vector<ReasoningStep> one_step{{"Who is Albert?", e1, "A Belgian driver."}};
    scripted.add_fixture(rendered(spec, question, one_step, {qe, e1}),
                         " So the final answer is: Albert.");

    RecordingBackend recording(scripted);
    auto chain = generate_chain(question, spec, config, recording, retriever, 0.0,
                                ChainId{"ex", 7, 0});

    CHECK(chain.decode.greedy);
    REQUIRE(chain.question_evidence.has_value());
    CHECK(chain.question_evidence->title == "Race 1921");
    REQUIRE(chain.steps.size() == 1);
    CHECK(chain.steps[0].intermediate_question == "Who is Albert?");
    REQUIRE(chain.steps[0].evidence.has_value());
    CHECK(chain.steps[0].evidence->title == "Albert");
    CHECK(chain.steps[0].intermediate_answer == "A Belgian driver.");
    CHECK(chain.final_answer == std::string("Albert"));
    CHECK(chain.raw_transcript ==
          "Follow up: Who is Albert?\n"
          "Intermediate answer: A Belgian driver.\n"
          "So the final answer is: Albert.\n");

    REQUIRE(recording.requests.size() == 3);
    CHECK(recording.requests[0].stop_sequences == std::vector<std::string>{"\n"});
    CHECK(recording.requests[1].stop_sequences ==
          std::vector<std::string>{"\nFollow up:", "\nSo the final answer is:"});
    for (const auto& request : recording.requests) {
        CHECK(request.seed == 7);  // id.seed + id.index
        CHECK(request.temperature == 0.0);
        CHECK(request.max_tokens == config.max_tokens);
    }
}

TEST_CASE("a model can answer immediately, even from the follow-up cue") {
    auto spec = test_spec();
    ChainGenConfig config;
    MapRetriever retriever;

    backend::ScriptedBackend direct;
    direct.add_fixture(rendered(spec, "Easy?", {}, {}), " So the final answer is: Yes.");
    auto chain = generate_chain("Easy?", spec, config, direct, retriever, 0.0, {});
    CHECK(chain.steps.empty());
    CHECK(chain.final_answer == std::string("Yes"));

    // Marker mid-line after an echoed cue still counts.
    backend::ScriptedBackend echoed;
    echoed.add_fixture(rendered(spec, "Easy?", {}, {}),
                       "Follow up: So the final answer is: No.");
    auto echo_chain = generate_chain("Easy?", spec, config, echoed, retriever, 0.0, {});
    CHECK(echo_chain.final_answer == std::string("No"));
    CHECK(echo_chain.steps.empty());
}

TEST_CASE("echoed markers on follow-ups and answers are stripped") {
    auto spec = test_spec();
    ChainGenConfig config;
    MapRetriever retriever;
    backend::ScriptedBackend scripted;

    scripted.add_fixture(rendered(spec, "Q?", {}, {}), "Follow up: What is two plus two?");
    scripted.add_fixture(
        rendered(spec, "Q?", {}, {}, PromptCue::answer_for("What is two plus two?")),
        "Intermediate answer: Four");
    std::vector<ReasoningStep> one{{"What is two plus two?", std::nullopt, "Four"}};
    scripted.add_fixture(rendered(spec, "Q?", one, {}), " So the final answer is: Four.");

    auto chain = generate_chain("Q?", spec, config, scripted, retriever, 0.0, {});
    REQUIRE(chain.steps.size() == 1);
    CHECK(chain.steps[0].intermediate_question == "What is two plus two?");
    CHECK(chain.steps[0].intermediate_answer == "Four");
    CHECK_FALSE(chain.steps[0].evidence.has_value());  // retriever had nothing
}

TEST_CASE("a stray need-followups line is kept in the transcript and requeried once") {
    auto spec = test_spec();
    ChainGenConfig config;
    MapRetriever retriever;
    const std::string transient = "Are follow up questions needed here: Yes.";

    backend::ScriptedBackend recovers;
    recovers.add_fixture(rendered(spec, "Q?", {}, {}), transient);
    recovers.add_fixture(rendered(spec, "Q?", {}, {}, PromptCue::next_question(), {transient}),
                         " So the final answer is: Fine.");
    auto chain = generate_chain("Q?", spec, config, recovers, retriever, 0.0, {});
    CHECK(chain.final_answer == std::string("Fine"));
    CHECK(chain.raw_transcript == transient + "\nSo the final answer is: Fine.\n");

    // Stuck on the marker twice: the chain closes without an answer.
    backend::ScriptedBackend stuck;
    stuck.add_fixture(rendered(spec, "Q?", {}, {}), transient);
    stuck.add_fixture(rendered(spec, "Q?", {}, {}, PromptCue::next_question(), {transient}),
                      transient);
    auto null_chain = generate_chain("Q?", spec, config, stuck, retriever, 0.0, {});
    CHECK_FALSE(null_chain.final_answer.has_value());
    CHECK(null_chain.steps.empty());
}

TEST_CASE("an unparseable continuation closes the chain without an answer") {
    auto spec = test_spec();
    ChainGenConfig config;
    MapRetriever retriever;

    backend::ScriptedBackend scripted;
    scripted.add_fixture(rendered(spec, "Q?", {}, {}), "   ");
    auto chain = generate_chain("Q?", spec, config, scripted, retriever, 0.0, {});
    CHECK_FALSE(chain.final_answer.has_value());
    CHECK(chain.steps.empty());
}

TEST_CASE("the step budget caps runaway decompositions") {
    auto spec = test_spec();
    ChainGenConfig config;
    config.max_steps = 2;
    MapRetriever retriever;
    backend::ScriptedBackend scripted;

    std::vector<ReasoningStep> steps;
    for (int i = 0; i < 2; ++i) {
        std::string q = "Sub " + std::to_string(i) + "?";
        scripted.add_fixture(rendered(spec, "Big?", steps, {}), " " + q);
        scripted.add_fixture(rendered(spec, "Big?", steps, {}, PromptCue::answer_for(q)),
                             " part " + std::to_string(i));
        steps.push_back({q, std::nullopt, "part " + std::to_string(i)});
    }
    // No fixture for a third follow-up: the loop must stop at max_steps.
    auto chain = generate_chain("Big?", spec, config, scripted, retriever, 0.0, {});
    CHECK(chain.steps.size() == 2);
    CHECK_FALSE(chain.final_answer.has_value());
}

TEST_CASE("transport and budget failures yield a null chain instead of throwing") {
    auto spec = test_spec();
    ChainGenConfig config;
    MapRetriever retriever;

    ThrowingBackend throwing;
    auto chain = generate_chain("Q?", spec, config, throwing, retriever, 0.7, ChainId{"ex", 1, 2});
    CHECK_FALSE(chain.final_answer.has_value());
    CHECK(chain.steps.empty());
    CHECK(chain.decode == DecodeSpec::sampled(0.7));

    backend::ScriptedBackend tiny{backend::BackendProfile{"scripted", 50, "whitespace"}};
    auto budget_chain = generate_chain("Q?", spec, config, tiny, retriever, 0.0, {});
    CHECK_FALSE(budget_chain.final_answer.has_value());
}

TEST_CASE("sample_chains draws greedy first, then sampled, with offset indices") {
    backend::ScriptedBackend scripted;
    MapRetriever retriever;
    retriever.add("Q?", "Topic", "Background sentence.");
    retriever.add("Sub?", "Sub", "Sub fact.");
    auto spec = test_spec();
    ChainGenConfig config;
    config.k_chains = 3;

    std::vector<scripting::PlannedChain> plans{
        {{}, std::string("A.")},
        {{{"Sub?", "sub answer"}}, std::string("B")},
        {{}, std::nullopt},  // stalls and closes null
    };
    auto planned = scripting::script_chain_set(scripted, retriever, spec, config, "Q?", "ex", 9,
                                               plans, 6);
    auto chains = sample_chains("Q?", spec, config, scripted, retriever, "ex", 9, 6);

    REQUIRE(chains.size() == 3);
    CHECK(chains[0].decode.greedy);
    CHECK(chains[1].decode == DecodeSpec::sampled(0.7));
    CHECK(chains[2].decode == DecodeSpec::sampled(0.7));
    CHECK(chains[0].id == ChainId{"ex", 9, 6});
    CHECK(chains[1].id == ChainId{"ex", 9, 7});
    CHECK(chains[2].id == ChainId{"ex", 9, 8});
    CHECK(chains[0].final_answer == std::string("A"));
    CHECK(chains[1].final_answer == std::string("B"));
    REQUIRE(chains[1].steps.size() == 1);
    CHECK(chains[1].steps[0].evidence->title == "Sub");
    CHECK_FALSE(chains[2].final_answer.has_value());
    // Every chain saw the original-question evidence.
    for (const auto& chain : chains) {
        REQUIRE(chain.question_evidence.has_value());
        CHECK(chain.question_evidence->title == "Topic");
    }
    // The scripted plan predicts the generated chains exactly.
    CHECK(json(chains) == json(planned));

    ChainGenConfig bad = config;
    bad.k_chains = 0;
    CHECK_THROWS_AS(sample_chains("Q?", spec, bad, scripted, retriever), ConfigError);
}

TEST_CASE("distinct seeds keep sampled draws of the same prompt apart") {
    backend::ScriptedBackend scripted;
    MapRetriever retriever;
    auto spec = test_spec();
    ChainGenConfig config;
    config.k_chains = 3;

    // Same question, same prompts; only the seed separates the draws.
    std::vector<scripting::PlannedChain> plans{
        {{}, std::string("greedy")},
        {{}, std::string("draw one")},
        {{}, std::string("draw two")},
    };
    scripting::script_chain_set(scripted, retriever, spec, config, "Q?", "ex", 40, plans);
    auto chains = sample_chains("Q?", spec, config, scripted, retriever, "ex", 40);
    CHECK(chains[0].final_answer == std::string("greedy"));
    CHECK(chains[1].final_answer == std::string("draw one"));
    CHECK(chains[2].final_answer == std::string("draw two"));
}
