#include "metachain/core.hpp"

#include "metachain/text.hpp"

namespace metachain {

namespace {

// Optional fields: omit on write, accept missing or null on read.
template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
    if (v.has_value()) j[key] = *v;
}

template <typename T>
void get_opt(const json& j, const char* key, std::optional<T>& v) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        v.reset();
    } else {
        v = it->template get<T>();
    }
}

}  // namespace

std::string answer_kind_name(AnswerKind k) {
    switch (k) {
        case AnswerKind::binary: return "binary";
        case AnswerKind::open: return "open";
        case AnswerKind::numeric: return "numeric";
    }
    throw std::logic_error("bad AnswerKind");
}

AnswerKind answer_kind_from_name(const std::string& name) {
    if (name == "binary") return AnswerKind::binary;
    if (name == "open") return AnswerKind::open;
    if (name == "numeric") return AnswerKind::numeric;
    throw ConfigError("unknown answer_kind: " + name);
}

std::string evidence_source_name(EvidenceSource s) {
    switch (s) {
        case EvidenceSource::web_search: return "web_search";
        case EvidenceSource::local_corpus: return "local_corpus";
        case EvidenceSource::fixture: return "fixture";
    }
    throw std::logic_error("bad EvidenceSource");
}

EvidenceSource evidence_source_from_name(const std::string& name) {
    if (name == "web_search") return EvidenceSource::web_search;
    if (name == "local_corpus") return EvidenceSource::local_corpus;
    if (name == "fixture") return EvidenceSource::fixture;
    throw ConfigError("unknown evidence source: " + name);
}

std::string context_variant_name(ContextVariant v) {
    return v == ContextVariant::qa_pairs ? "qa_pairs" : "evidence_pairs";
}

ContextVariant context_variant_from_name(const std::string& name) {
    if (name == "qa_pairs") return ContextVariant::qa_pairs;
    if (name == "evidence_pairs") return ContextVariant::evidence_pairs;
    throw ConfigError("unknown context variant: " + name);
}

bool is_abstain(const std::optional<std::string>& answer) {
    return !answer.has_value() || text::is_unknown_marker(*answer);
}

bool is_abstain(const Prediction& p) { return is_abstain(p.answer); }

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::size_t uniform_pick(std::uint64_t seed, std::size_t n) {
    if (n == 0) throw std::logic_error("uniform_pick over empty range");
    return static_cast<std::size_t>(mix64(seed) % n);
}

Strategy parse_strategy(const std::string& token) {
    auto at = token.find('@');
    std::string head = at == std::string::npos ? token : token.substr(0, at);
    int param = 0;
    if (at != std::string::npos) {
        try {
            param = std::stoi(token.substr(at + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad strategy parameter in '" + token + "'");
        }
        if (param < 1) throw ConfigError("strategy parameter must be >= 1 in '" + token + "'");
    }

    if (head == "self_ask" && !param) return Strategy::self_ask();
    if (head == "sc" && param) return Strategy::sc(param);
    if (head == "scr" && !param) return Strategy::scr();
    if (head == "scr_e" && !param) return Strategy::scr(ContextVariant::evidence_pairs);
    if (head == "mcr" && !param) return Strategy::mcr();
    if (head == "mcr_e" && !param) return Strategy::mcr(ContextVariant::evidence_pairs);
    if (head == "mcr_sc" && param) return Strategy::mcr_sc(param);
    if (head == "oracle" && !param) return Strategy::oracle();
    throw ConfigError("unknown strategy '" + token +
                      "' (expected self_ask, sc@k, scr, scr_e, mcr, mcr_e, mcr_sc@r, oracle)");
}

std::string strategy_token(const Strategy& s) {
    bool ev = s.variant == ContextVariant::evidence_pairs;
    switch (s.kind) {
        case StrategyKind::self_ask: return "self_ask";
        case StrategyKind::sc: return "sc@" + std::to_string(s.k);
        case StrategyKind::scr: return ev ? "scr_e" : "scr";
        case StrategyKind::mcr: return ev ? "mcr_e" : "mcr";
        case StrategyKind::mcr_sc: return "mcr_sc@" + std::to_string(s.k);
        case StrategyKind::oracle: return "oracle";
    }
    throw std::logic_error("bad StrategyKind");
}

void to_json(json& j, const Example& v) {
    j = json{{"id", v.id},
             {"question", v.question},
             {"gold_answers", v.gold_answers},
             {"answer_kind", answer_kind_name(v.answer_kind)},
             {"dataset", v.dataset}};
    put_opt(j, "choices", v.choices);
    put_opt(j, "units", v.units);
}

void from_json(const json& j, Example& v) {
    j.at("id").get_to(v.id);
    j.at("question").get_to(v.question);
    j.at("gold_answers").get_to(v.gold_answers);
    v.answer_kind = answer_kind_from_name(j.at("answer_kind").get<std::string>());
    v.dataset = j.value("dataset", std::string{});
    get_opt(j, "choices", v.choices);
    get_opt(j, "units", v.units);
}

void to_json(json& j, const Evidence& v) {
    j = json{{"title", v.title},
             {"snippet", v.snippet},
             {"source", evidence_source_name(v.source)},
             {"rank", v.rank}};
}

void from_json(const json& j, Evidence& v) {
    j.at("title").get_to(v.title);
    j.at("snippet").get_to(v.snippet);
    v.source = evidence_source_from_name(j.at("source").get<std::string>());
    v.rank = j.value("rank", 1);
}

void to_json(json& j, const ReasoningStep& v) {
    j = json{{"intermediate_question", v.intermediate_question},
             {"intermediate_answer", v.intermediate_answer}};
    put_opt(j, "evidence", v.evidence);
}

void from_json(const json& j, ReasoningStep& v) {
    j.at("intermediate_question").get_to(v.intermediate_question);
    j.at("intermediate_answer").get_to(v.intermediate_answer);
    get_opt(j, "evidence", v.evidence);
}

void to_json(json& j, const DecodeSpec& v) {
    if (v.greedy) {
        j = json{{"kind", "greedy"}};
    } else {
        j = json{{"kind", "sampled"}, {"temperature", v.temperature}};
    }
}

void from_json(const json& j, DecodeSpec& v) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "greedy") {
        v = DecodeSpec::make_greedy();
    } else if (kind == "sampled") {
        v = DecodeSpec::sampled(j.at("temperature").get<double>());
    } else {
        throw ConfigError("unknown decode kind: " + kind);
    }
}

void to_json(json& j, const ChainId& v) {
    j = json{{"example_id", v.example_id}, {"seed", v.seed}, {"index", v.index}};
}

void from_json(const json& j, ChainId& v) {
    j.at("example_id").get_to(v.example_id);
    j.at("seed").get_to(v.seed);
    j.at("index").get_to(v.index);
}

void to_json(json& j, const ReasoningChain& v) {
    j = json{{"id", v.id},
             {"steps", v.steps},
             {"decode", v.decode},
             {"raw_transcript", v.raw_transcript}};
    put_opt(j, "final_answer", v.final_answer);
    put_opt(j, "question_evidence", v.question_evidence);
}

void from_json(const json& j, ReasoningChain& v) {
    j.at("id").get_to(v.id);
    j.at("steps").get_to(v.steps);
    j.at("decode").get_to(v.decode);
    j.at("raw_transcript").get_to(v.raw_transcript);
    get_opt(j, "final_answer", v.final_answer);
    get_opt(j, "question_evidence", v.question_evidence);
}

void to_json(json& j, const MultiChainContext& v) {
    json entries = json::array();
    for (const auto& e : v.entries) {
        entries.push_back(json{{"question", e.question}, {"payload", e.payload}});
    }
    j = json{{"entries", std::move(entries)}, {"variant", context_variant_name(v.variant)}};
}

void from_json(const json& j, MultiChainContext& v) {
    v.entries.clear();
    for (const auto& e : j.at("entries")) {
        v.entries.push_back({e.at("question").get<std::string>(), e.at("payload").get<std::string>()});
    }
    v.variant = context_variant_from_name(j.at("variant").get<std::string>());
}

void to_json(json& j, const Strategy& v) {
    switch (v.kind) {
        case StrategyKind::self_ask: j = json{{"kind", "self_ask"}}; break;
        case StrategyKind::sc: j = json{{"kind", "sc"}, {"k", v.k}}; break;
        case StrategyKind::scr: j = json{{"kind", "scr"}}; break;
        case StrategyKind::mcr: j = json{{"kind", "mcr"}}; break;
        case StrategyKind::mcr_sc: j = json{{"kind", "mcr_sc"}, {"r", v.k}}; break;
        case StrategyKind::oracle: j = json{{"kind", "oracle"}}; break;
    }
    if (v.variant == ContextVariant::evidence_pairs) j["variant"] = context_variant_name(v.variant);
}

void from_json(const json& j, Strategy& v) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "self_ask") v = Strategy::self_ask();
    else if (kind == "sc") v = Strategy::sc(j.at("k").get<int>());
    else if (kind == "scr") v = Strategy::scr();
    else if (kind == "mcr") v = Strategy::mcr();
    else if (kind == "mcr_sc") v = Strategy::mcr_sc(j.at("r").get<int>());
    else if (kind == "oracle") v = Strategy::oracle();
    else throw ConfigError("unknown strategy kind: " + kind);
    if (j.contains("variant")) v.variant = context_variant_from_name(j.at("variant").get<std::string>());
}

void to_json(json& j, const Prediction& v) {
    j = json{{"strategy", v.strategy}, {"chains_used", v.chains_used}};
    put_opt(j, "answer", v.answer);
    put_opt(j, "explanation", v.explanation);
}

void from_json(const json& j, Prediction& v) {
    j.at("strategy").get_to(v.strategy);
    j.at("chains_used").get_to(v.chains_used);
    get_opt(j, "answer", v.answer);
    get_opt(j, "explanation", v.explanation);
}

}  // namespace metachain
