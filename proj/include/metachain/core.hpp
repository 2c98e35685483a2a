#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace metachain {

using json = nlohmann::json;

/// Invalid configuration, dataset, fixture, or prompt registry content.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Prompt does not fit the model context even after trimming.
struct BudgetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// HTTP transport failed after all retry attempts.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AnswerKind { binary, open, numeric };

/// One dataset question. `choices` is set for binary examples, `units` for
/// numeric ones (gold measure units are supplied with the question).
struct Example {
    std::string id;
    std::string question;
    std::vector<std::string> gold_answers;
    AnswerKind answer_kind = AnswerKind::open;
    std::optional<std::vector<std::string>> choices;
    std::optional<std::string> units;
    std::string dataset;
};

enum class EvidenceSource { web_search, local_corpus, fixture };

struct Evidence {
    std::string title;
    std::string snippet;
    EvidenceSource source = EvidenceSource::fixture;
    int rank = 1;  // 1-based retrieval rank

    /// "{title}: {snippet}", the form evidence takes inside prompts.
    std::string rendered() const { return title + ": " + snippet; }
};

/// One decomposition step: intermediate question q_i, the evidence retrieved
/// for it (absent when retrieval is disabled), and the intermediate answer.
struct ReasoningStep {
    std::string intermediate_question;
    std::optional<Evidence> evidence;
    std::string intermediate_answer;
};

struct DecodeSpec {
    bool greedy = true;
    double temperature = 0.0;  // meaningful only when !greedy

    static DecodeSpec make_greedy() { return {true, 0.0}; }
    static DecodeSpec sampled(double t) { return {false, t}; }
    bool operator==(const DecodeSpec&) const = default;
};

/// Provenance of a chain: which example, which run seed, which slot in the
/// sampled set. Reproducible across repeated runs.
struct ChainId {
    std::string example_id;
    std::uint64_t seed = 0;
    int index = 0;
    bool operator==(const ChainId&) const = default;
};

struct ReasoningChain {
    ChainId id;
    std::vector<ReasoningStep> steps;
    std::optional<std::string> final_answer;  // absent = null prediction
    std::optional<Evidence> question_evidence;
    DecodeSpec decode;
    std::string raw_transcript;
};

enum class ContextVariant { qa_pairs, evidence_pairs };

struct ContextEntry {
    std::string question;
    std::string payload;  // a_i for qa_pairs, rendered e_i for evidence_pairs
    bool operator==(const ContextEntry&) const = default;
};

/// Flattened view of k chains fed to the meta-reasoner: within-chain order
/// preserved, chains concatenated in sampling order (greedy first).
struct MultiChainContext {
    std::vector<ContextEntry> entries;
    ContextVariant variant = ContextVariant::qa_pairs;
};

enum class StrategyKind { self_ask, sc, scr, mcr, mcr_sc, oracle };

/// Answer strategy with its parameters: sc carries k, mcr_sc carries r, and
/// the meta-reasoning kinds carry the context variant (scr_e/mcr_e are the
/// evidence_pairs forms of scr/mcr).
struct Strategy {
    StrategyKind kind = StrategyKind::mcr;
    int k = 0;  // sc: votes used; mcr_sc: MCR runs
    ContextVariant variant = ContextVariant::qa_pairs;

    bool operator==(const Strategy&) const = default;

    static Strategy self_ask() { return {StrategyKind::self_ask, 0, ContextVariant::qa_pairs}; }
    static Strategy sc(int k) { return {StrategyKind::sc, k, ContextVariant::qa_pairs}; }
    static Strategy scr(ContextVariant v = ContextVariant::qa_pairs) { return {StrategyKind::scr, 0, v}; }
    static Strategy mcr(ContextVariant v = ContextVariant::qa_pairs) { return {StrategyKind::mcr, 0, v}; }
    static Strategy mcr_sc(int r, ContextVariant v = ContextVariant::qa_pairs) { return {StrategyKind::mcr_sc, r, v}; }
    static Strategy oracle() { return {StrategyKind::oracle, 0, ContextVariant::qa_pairs}; }
};

/// Parses the CLI/config token grammar: self_ask, sc@k, scr, scr_e, mcr,
/// mcr_e, mcr_sc@r, oracle. Throws ConfigError on anything else.
Strategy parse_strategy(const std::string& token);
std::string strategy_token(const Strategy& s);

struct Prediction {
    std::optional<std::string> answer;  // absent or "Unknown" = abstain
    std::optional<std::string> explanation;
    Strategy strategy;
    std::vector<ChainId> chains_used;
};

/// Abstention covers both a missing answer and the literal meta-reasoner
/// fallback "Unknown" (case-insensitive after trimming).
bool is_abstain(const std::optional<std::string>& answer);
bool is_abstain(const Prediction& p);

/// splitmix64 finalizer; derives decorrelated seeds from a base seed.
std::uint64_t mix64(std::uint64_t x);

/// Deterministic uniform pick in [0, n). Written out explicitly so results
/// do not depend on the standard library's distribution implementation.
std::size_t uniform_pick(std::uint64_t seed, std::size_t n);

// JSON bindings (nlohmann ADL). Optional fields are omitted when absent and
// accepted as null on input, so round-trips are lossless.
void to_json(json& j, const Example& v);
void from_json(const json& j, Example& v);
void to_json(json& j, const Evidence& v);
void from_json(const json& j, Evidence& v);
void to_json(json& j, const ReasoningStep& v);
void from_json(const json& j, ReasoningStep& v);
void to_json(json& j, const DecodeSpec& v);
void from_json(const json& j, DecodeSpec& v);
void to_json(json& j, const ChainId& v);
void from_json(const json& j, ChainId& v);
void to_json(json& j, const ReasoningChain& v);
void from_json(const json& j, ReasoningChain& v);
void to_json(json& j, const MultiChainContext& v);
void from_json(const json& j, MultiChainContext& v);
void to_json(json& j, const Strategy& v);
void from_json(const json& j, Strategy& v);
void to_json(json& j, const Prediction& v);
void from_json(const json& j, Prediction& v);

std::string answer_kind_name(AnswerKind k);
AnswerKind answer_kind_from_name(const std::string& name);
std::string evidence_source_name(EvidenceSource s);
EvidenceSource evidence_source_from_name(const std::string& name);
std::string context_variant_name(ContextVariant v);
ContextVariant context_variant_from_name(const std::string& name);

/// Reads one JSON object per line, skipping blank lines. Errors mention the
/// 1-based line number.
template <typename T>
std::vector<T> read_jsonl(std::istream& in, const std::string& source_name);

template <typename T>
std::vector<T> read_jsonl_file(const std::string& path);

template <typename T>
void write_jsonl_file(const std::string& path, const std::vector<T>& rows);

// Template definitions live in core_io.hpp to keep this header light.

}  // namespace metachain

#include "metachain/core_io.hpp"
