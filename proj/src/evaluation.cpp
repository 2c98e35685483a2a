#include "metachain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "metachain/text.hpp"

namespace metachain::evaluation {

MetricKind metric_kind_from_name(const std::string& name) {
    if (name == "token_f1") return MetricKind::token_f1;
    if (name == "binary_em") return MetricKind::binary_em;
    if (name == "order_of_magnitude") return MetricKind::order_of_magnitude;
    throw ConfigError("unknown metric kind: " + name);
}

std::string metric_kind_name(MetricKind k) {
    switch (k) {
        case MetricKind::token_f1: return "token_f1";
        case MetricKind::binary_em: return "binary_em";
        case MetricKind::order_of_magnitude: return "order_of_magnitude";
    }
    throw std::logic_error("bad MetricKind");
}

AbstainPolicy abstain_policy_from_name(const std::string& name) {
    if (name == "half_credit") return AbstainPolicy::half_credit;
    if (name == "zero_credit") return AbstainPolicy::zero_credit;
    if (name == "random_label") return AbstainPolicy::random_label;
    throw ConfigError("unknown abstain policy: " + name);
}

std::string abstain_policy_name(AbstainPolicy p) {
    switch (p) {
        case AbstainPolicy::half_credit: return "half_credit";
        case AbstainPolicy::zero_credit: return "zero_credit";
        case AbstainPolicy::random_label: return "random_label";
    }
    throw std::logic_error("bad AbstainPolicy");
}

MetricConfig default_metric_for(AnswerKind kind) {
    switch (kind) {
        case AnswerKind::binary: return {MetricKind::binary_em, AbstainPolicy::half_credit, 0};
        case AnswerKind::numeric: return {MetricKind::order_of_magnitude, AbstainPolicy::zero_credit, 0};
        case AnswerKind::open: return {MetricKind::token_f1, AbstainPolicy::zero_credit, 0};
    }
    throw std::logic_error("bad AnswerKind");
}

std::string normalize_answer(std::string_view s) {
    std::string lowered = text::to_lower(s);
    std::string no_punct = text::strip_punctuation(lowered);
    auto tokens = text::whitespace_tokens(no_punct);
    std::string out;
    for (const auto& tok : tokens) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

namespace {

double single_f1(const std::vector<std::string>& pred_toks, const std::vector<std::string>& gold_toks) {
    if (pred_toks.empty() || gold_toks.empty()) {
        // Both empty counts as a match (both normalize to nothing).
        return pred_toks.empty() && gold_toks.empty() ? 1.0 : 0.0;
    }
    std::map<std::string, int> gold_counts;
    for (const auto& t : gold_toks) ++gold_counts[t];
    int common = 0;
    for (const auto& t : pred_toks) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    double precision = double(common) / double(pred_toks.size());
    double recall = double(common) / double(gold_toks.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double token_f1(const std::string& pred, const std::vector<std::string>& golds) {
    auto pred_toks = text::whitespace_tokens(normalize_answer(pred));
    double best = 0.0;
    for (const auto& gold : golds) {
        auto gold_toks = text::whitespace_tokens(normalize_answer(gold));
        best = std::max(best, single_f1(pred_toks, gold_toks));
    }
    return best;
}

double binary_em(const std::optional<std::string>& pred,
                 const std::vector<std::string>& golds,
                 const std::vector<std::string>& choices,
                 const MetricConfig& config) {
    std::optional<std::string> effective = pred;
    if (is_abstain(effective)) {
        switch (config.abstain_policy) {
            case AbstainPolicy::half_credit: return 0.5;
            case AbstainPolicy::zero_credit: return 0.0;
            case AbstainPolicy::random_label:
                if (choices.empty()) throw ConfigError("random_label abstain policy needs choices");
                effective = choices[uniform_pick(config.random_label_seed, choices.size())];
                break;
        }
    }
    std::string normalized = normalize_answer(*effective);
    for (const auto& gold : golds) {
        if (normalized == normalize_answer(gold)) return 1.0;
    }
    return 0.0;
}

std::optional<double> parse_quantity(std::string_view s) {
    // Find the first digit (or a '.' immediately followed by one).
    std::size_t start = std::string_view::npos;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c >= '0' && c <= '9') {
            start = i;
            break;
        }
        if (c == '.' && i + 1 < s.size() && s[i + 1] >= '0' && s[i + 1] <= '9') {
            start = i;
            break;
        }
    }
    if (start == std::string_view::npos) return std::nullopt;
    // Allow a sign directly in front so "-5" parses (and is later rejected
    // as non-positive rather than read as 5).
    if (start > 0 && (s[start - 1] == '-' || s[start - 1] == '+')) --start;

    std::string run;
    std::size_t i = start;
    for (; i < s.size(); ++i) {
        char c = s[i];
        if ((c >= '0' && c <= '9') || c == '.' || c == '+' || c == '-' || c == 'e' || c == 'E') {
            run.push_back(c);
        } else if (c == ',' && i + 1 < s.size() && s[i + 1] >= '0' && s[i + 1] <= '9') {
            continue;  // digit-group comma
        } else {
            break;
        }
    }

    const char* begin = run.c_str();
    char* end = nullptr;
    double value = std::strtod(begin, &end);
    if (end == begin) return std::nullopt;

    // Magnitude word immediately after the number ("3 million", "2billion").
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t word_end = i;
    while (word_end < s.size() &&
           std::isalpha(static_cast<unsigned char>(s[word_end]))) ++word_end;
    std::string word = text::to_lower(s.substr(i, word_end - i));
    if (word == "thousand") value *= 1e3;
    else if (word == "million") value *= 1e6;
    else if (word == "billion") value *= 1e9;
    else if (word == "trillion") value *= 1e12;

    return value;
}

OomScore order_of_magnitude_score(const std::optional<std::string>& pred, double gold) {
    if (gold <= 0.0) throw ConfigError("order_of_magnitude gold must be positive");
    if (!pred.has_value() || text::is_unknown_marker(*pred)) return {0.0, true};
    auto value = parse_quantity(*pred);
    if (!value.has_value() || *value <= 0.0) return {0.0, true};
    double score = 1.0 - std::abs(std::log10(*value / gold)) / 3.0;
    return {std::max(0.0, score), false};
}

ScoreResult score_answer(const std::optional<std::string>& answer, const Example& example,
                         const MetricConfig& config) {
    ScoreResult result;
    result.abstained = is_abstain(answer);

    if (result.abstained && config.kind != MetricKind::binary_em) {
        // Non-binary abstains score 0 (random_label only makes sense with a
        // closed choice set).
        result.score = config.abstain_policy == AbstainPolicy::half_credit ? 0.5 : 0.0;
        return result;
    }

    switch (config.kind) {
        case MetricKind::binary_em: {
            std::vector<std::string> choices = example.choices.value_or(std::vector<std::string>{});
            MetricConfig per_example = config;
            // Decorrelate random labels across examples while keeping reruns
            // deterministic for a fixed configured seed.
            per_example.random_label_seed = config.random_label_seed ^ text::fnv1a64(example.id);
            result.score = binary_em(answer, example.gold_answers, choices, per_example);
            break;
        }
        case MetricKind::token_f1:
            result.score = token_f1(*answer, example.gold_answers);
            break;
        case MetricKind::order_of_magnitude: {
            if (example.gold_answers.empty()) throw ConfigError("example has no gold answers");
            auto gold = parse_quantity(example.gold_answers.front());
            if (!gold.has_value() || *gold <= 0.0) {
                throw ConfigError("gold answer for " + example.id + " is not a positive quantity");
            }
            auto oom = order_of_magnitude_score(answer, *gold);
            result.score = oom.score;
            result.parse_warning = oom.parse_warning;
            break;
        }
    }
    return result;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / double(xs.size());
}

double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / double(xs.size()));
}

RunAggregate aggregate_runs(const std::vector<std::vector<double>>& per_run_scores) {
    if (per_run_scores.empty()) throw ConfigError("aggregate_runs needs at least one run");
    std::size_t n = per_run_scores.front().size();
    RunAggregate agg;
    for (const auto& run : per_run_scores) {
        if (run.size() != n) throw ConfigError("runs score different example sets");
        agg.run_means.push_back(mean_of(run));
    }
    agg.mean = mean_of(agg.run_means);
    agg.std_dev = population_std(agg.run_means);
    return agg;
}

}  // namespace metachain::evaluation
