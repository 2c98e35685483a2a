#include "doctest.h"

#include <optional>
#include <string>
#include <vector>

#include "metachain/aggregation.hpp"
#include "metachain/backend.hpp"
#include "metachain/scripting.hpp"

using namespace metachain;
using namespace metachain::aggregation;

namespace {

ReasoningChain make_chain(const std::string& example_id, int index, bool greedy,
                          std::optional<std::string> answer,
                          std::vector<std::pair<std::string, std::string>> steps = {}) {
    ReasoningChain chain;
    chain.id = ChainId{example_id, 1, index};
    chain.decode = greedy ? DecodeSpec::make_greedy() : DecodeSpec::sampled(0.7);
    chain.final_answer = std::move(answer);
    for (auto& [q, a] : steps) chain.steps.push_back(ReasoningStep{q, std::nullopt, a});
    return chain;
}

// Independent O(n^2) restatement of the vote: for every non-abstaining entry,
// count its normalized group by direct comparison, then keep the largest
// group, breaking ties toward the group seen first.
std::optional<std::size_t> reference_majority(const std::vector<std::optional<std::string>>& answers) {
    std::optional<std::size_t> best;
    int best_count = -1;
    std::size_t best_first = 0;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (is_abstain(answers[i])) continue;
        std::string key = evaluation::normalize_answer(*answers[i]);
        int count = 0;
        std::size_t first = i;
        for (std::size_t j = 0; j < answers.size(); ++j) {
            if (is_abstain(answers[j])) continue;
            if (evaluation::normalize_answer(*answers[j]) == key) {
                ++count;
                if (j < first) first = j;
            }
        }
        if (count > best_count || (count == best_count && first < best_first)) {
            best_count = count;
            best_first = first;
            best = first;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("majority vote groups by normalized answer") {
    std::vector<std::optional<std::string>> answers{
        std::string("Bristol."), std::string("London"), std::string("bristol")};
    auto winner = majority_index(answers);
    REQUIRE(winner.has_value());
    CHECK(*winner == 0);  // earliest entry of the winning group
}

TEST_CASE("majority vote skips nulls and Unknown") {
    std::vector<std::optional<std::string>> answers{
        std::nullopt, std::string("Unknown"), std::string("No"), std::nullopt};
    auto winner = majority_index(answers);
    REQUIRE(winner.has_value());
    CHECK(*winner == 2);

    CHECK_FALSE(majority_index({std::nullopt, std::string("unknown")}).has_value());
    CHECK_FALSE(majority_index({}).has_value());
}

TEST_CASE("majority vote ties go to the group that appeared first") {
    std::vector<std::optional<std::string>> answers{
        std::string("Yes"), std::string("No"), std::string("no"), std::string("yes")};
    auto winner = majority_index(answers);
    REQUIRE(winner.has_value());
    CHECK(*winner == 0);
}

TEST_CASE("majority vote matches a brute-force reference exhaustively") {
    // Every multiset of length <= 4 over a pool that includes abstains and a
    // pair of surface forms that normalize together.
    const std::vector<std::optional<std::string>> pool{
        std::nullopt, std::string("Unknown"), std::string("Yes"),
        std::string("yes."), std::string("No")};
    for (std::size_t len = 0; len <= 4; ++len) {
        std::vector<std::size_t> digits(len, 0);
        while (true) {
            std::vector<std::optional<std::string>> answers;
            for (std::size_t d : digits) answers.push_back(pool[d]);
            CAPTURE(len);
            CHECK(majority_index(answers) == reference_majority(answers));
            std::size_t pos = 0;
            while (pos < len && digits[pos] == pool.size() - 1) digits[pos++] = 0;
            if (pos == len) break;
            ++digits[pos];
        }
        if (len == 0) continue;
    }
}

TEST_CASE("self-ask takes the greedy chain's answer") {
    std::vector<ReasoningChain> chains{
        make_chain("e1", 0, true, std::string("Rome")),
        make_chain("e1", 1, false, std::string("Paris")),
    };
    Prediction p = self_ask_answer(chains);
    CHECK(p.answer == std::string("Rome"));
    CHECK(p.strategy == Strategy::self_ask());
    REQUIRE(p.chains_used.size() == 1);
    CHECK(p.chains_used[0].index == 0);
}

TEST_CASE("self-ask falls back to a seeded pick when greedy is null") {
    std::vector<ReasoningChain> chains{
        make_chain("e1", 0, true, std::nullopt),
        make_chain("e1", 1, false, std::string("Paris")),
        make_chain("e1", 2, false, std::nullopt),
        make_chain("e1", 3, false, std::string("Rome")),
    };
    // Candidates in order: Paris (idx 1), Rome (idx 3).
    for (std::uint64_t seed : {0ull, 1ull, 7ull, 42ull}) {
        Prediction p = self_ask_answer(chains, seed);
        std::size_t pick = uniform_pick(seed, 2);
        CHECK(p.answer == (pick == 0 ? std::string("Paris") : std::string("Rome")));
        CHECK(p.answer == self_ask_answer(chains, seed).answer);  // stable
    }

    std::vector<ReasoningChain> all_null{
        make_chain("e1", 0, true, std::nullopt),
        make_chain("e1", 1, false, std::nullopt),
    };
    Prediction abstain = self_ask_answer(all_null);
    CHECK_FALSE(abstain.answer.has_value());
    CHECK(is_abstain(abstain));

    std::vector<ReasoningChain> no_greedy{make_chain("e1", 1, false, std::string("x"))};
    CHECK_THROWS_AS(self_ask_answer(no_greedy), ConfigError);
}

TEST_CASE("self-consistency votes over the first k chains only") {
    std::vector<ReasoningChain> chains{
        make_chain("e1", 0, true, std::string("No")),
        make_chain("e1", 1, false, std::string("Yes")),
        make_chain("e1", 2, false, std::string("yes.")),
        make_chain("e1", 3, false, std::string("No")),
        make_chain("e1", 4, false, std::string("No")),
    };
    // k=3: {No, Yes, yes.} -> Yes group wins 2:1, earliest surface form kept.
    Prediction k3 = self_consistency(chains, 3);
    CHECK(k3.answer == std::string("Yes"));
    CHECK(k3.strategy == Strategy::sc(3));
    CHECK(k3.chains_used.size() == 3);

    // k=5: No wins 3:2.
    CHECK(self_consistency(chains, 5).answer == std::string("No"));

    CHECK_THROWS_AS(self_consistency(chains, 0), ConfigError);
    CHECK_THROWS_AS(self_consistency(chains, 6), ConfigError);
}

TEST_CASE("self-consistency abstains when no chain votes") {
    std::vector<ReasoningChain> chains{
        make_chain("e1", 0, true, std::nullopt),
        make_chain("e1", 1, false, std::string("Unknown")),
    };
    Prediction p = self_consistency(chains, 2);
    CHECK_FALSE(p.answer.has_value());
    CHECK(p.chains_used.size() == 2);
}

TEST_CASE("oracle takes the best-scoring chain and never loses to a vote") {
    Example example{"ex", "q", {"no"}, AnswerKind::binary,
                    std::vector<std::string>{"Yes", "No"}, std::nullopt, "d"};
    auto metric = evaluation::default_metric_for(AnswerKind::binary);

    std::vector<ReasoningChain> chains{
        make_chain("ex", 0, true, std::string("Yes")),
        make_chain("ex", 1, false, std::string("No")),
        make_chain("ex", 2, false, std::nullopt),
    };
    CHECK(oracle_score(chains, example, metric) == doctest::Approx(1.0));
    Prediction p = oracle_prediction(chains, example, metric);
    CHECK(p.answer == std::string("No"));
    CHECK(p.strategy == Strategy::oracle());
    REQUIRE(p.chains_used.size() == 1);
    CHECK(p.chains_used[0].index == 1);

    // With every chain wrong the null floor still applies (binary abstains
    // score half credit under the default policy).
    std::vector<ReasoningChain> wrong{
        make_chain("ex", 0, true, std::string("Yes")),
        make_chain("ex", 1, false, std::nullopt),
    };
    CHECK(oracle_score(wrong, example, metric) == doctest::Approx(0.5));
}

TEST_CASE("oracle dominates self-ask and self-consistency on random chain sets") {
    auto metric = evaluation::default_metric_for(AnswerKind::binary);
    const std::vector<std::optional<std::string>> pool{
        std::string("Yes"), std::string("No"), std::string("Unknown"), std::nullopt};
    for (std::uint64_t trial = 0; trial < 300; ++trial) {
        Example example{"t" + std::to_string(trial), "q", {trial % 2 ? "yes" : "no"},
                        AnswerKind::binary, std::vector<std::string>{"Yes", "No"},
                        std::nullopt, "d"};
        std::vector<ReasoningChain> chains;
        for (int i = 0; i < 5; ++i) {
            auto answer = pool[uniform_pick(mix64(trial * 31 + i), pool.size())];
            chains.push_back(make_chain(example.id, i, i == 0, answer));
        }
        double oracle = oracle_score(chains, example, metric);
        double sa = evaluation::score_answer(self_ask_answer(chains, trial).answer,
                                             example, metric).score;
        double sc = evaluation::score_answer(self_consistency(chains, 5).answer,
                                             example, metric).score;
        CAPTURE(trial);
        CHECK(oracle >= sa);
        CHECK(oracle >= sc);
    }
}

TEST_CASE("MCR over multiple chain sets votes across the per-set answers") {
    backend::ScriptedBackend backend;
    meta_reasoner::MetaPromptSpec spec;
    spec.exemplars = {"Context:\nq a\nQuestion:\nq\nAnswer: demo. So the answer is: demo."};
    const std::string question = "Is the sum even?";

    std::vector<std::vector<ReasoningChain>> sets;
    for (int s = 0; s < 3; ++s) {
        std::vector<ReasoningChain> set{
            make_chain("ex", s * 2 + 0, true, std::string("Yes"),
                       {{"What is 1+1?", "2 (set " + std::to_string(s) + ")"}}),
            make_chain("ex", s * 2 + 1, false, std::string("No")),
        };
        sets.push_back(std::move(set));
    }
    scripting::script_meta(backend, spec, question, sets[0], ContextVariant::qa_pairs,
                           "Two is even. So the answer is: Yes.");
    scripting::script_meta(backend, spec, question, sets[1], ContextVariant::qa_pairs,
                           "The sum is odd. So the answer is: No.");
    scripting::script_meta(backend, spec, question, sets[2], ContextVariant::qa_pairs,
                           "Adding one and one gives two. So the answer is: Yes.");

    Prediction p = mcr_plus_sc(question, sets, spec, backend);
    CHECK(p.answer == std::string("Yes"));
    // The winning run's explanation is the earliest Yes run's.
    CHECK(p.explanation == std::string("Two is even."));
    CHECK(p.strategy == Strategy::mcr_sc(3));
    CHECK(p.chains_used.size() == 6);
}

TEST_CASE("MCR+SC with one set equals a single MCR run") {
    backend::ScriptedBackend backend;
    meta_reasoner::MetaPromptSpec spec;
    const std::string question = "Who wrote it?";
    std::vector<ReasoningChain> set{
        make_chain("ex", 0, true, std::string("Austen"), {{"Who is the author?", "Jane Austen"}})};
    scripting::script_meta(backend, spec, question, set, ContextVariant::qa_pairs,
                           "The author is Jane Austen. So the answer is: Austen.");

    Prediction single = meta_reasoner::run_mcr(question, set, spec, backend);
    Prediction voted = mcr_plus_sc(question, {set}, spec, backend);
    CHECK(voted.answer == single.answer);
    CHECK(voted.explanation == single.explanation);
    CHECK(voted.strategy == Strategy::mcr_sc(1));
}

TEST_CASE("MCR+SC abstains with the first run when every run abstains") {
    backend::ScriptedBackend backend;
    meta_reasoner::MetaPromptSpec spec;
    const std::string question = "Unanswerable?";
    std::vector<std::vector<ReasoningChain>> sets{
        {make_chain("ex", 0, true, std::nullopt, {{"q1", "a1"}})},
        {make_chain("ex", 1, true, std::nullopt, {{"q2", "a2"}})},
    };
    scripting::script_meta(backend, spec, question, sets[0], ContextVariant::qa_pairs,
                           "No idea. So the answer is: Unknown.");
    scripting::script_meta(backend, spec, question, sets[1], ContextVariant::qa_pairs,
                           "Still no idea. So the answer is: Unknown.");

    Prediction p = mcr_plus_sc(question, sets, spec, backend);
    CHECK(is_abstain(p));
    CHECK(p.explanation == std::string("No idea."));

    CHECK_THROWS_AS(mcr_plus_sc(question, {}, spec, backend), ConfigError);
}
