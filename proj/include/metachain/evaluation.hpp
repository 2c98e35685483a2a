#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metachain/core.hpp"

namespace metachain::evaluation {

enum class MetricKind { token_f1, binary_em, order_of_magnitude };
enum class AbstainPolicy { half_credit, zero_credit, random_label };

struct MetricConfig {
    MetricKind kind = MetricKind::token_f1;
    AbstainPolicy abstain_policy = AbstainPolicy::zero_credit;
    std::uint64_t random_label_seed = 0;  // only used by random_label
};

MetricKind metric_kind_from_name(const std::string& name);
std::string metric_kind_name(MetricKind k);
AbstainPolicy abstain_policy_from_name(const std::string& name);
std::string abstain_policy_name(AbstainPolicy p);

/// Binary datasets score exact-match with half-credit abstains, numeric ones
/// use the order-of-magnitude metric, everything else token F1.
MetricConfig default_metric_for(AnswerKind kind);

/// Extractive-QA answer normalization: lowercase, strip punctuation, drop
/// the articles "a"/"an"/"the", collapse whitespace.
std::string normalize_answer(std::string_view s);

/// Max over golds of the token-level F1 between normalized answers
/// (multiset precision/recall). Zero overlap scores 0.
double token_f1(const std::string& pred, const std::vector<std::string>& golds);

/// Exact match over normalized strings. Abstains score per policy: 0.5 under
/// half_credit, 0 under zero_credit; random_label substitutes a seeded
/// uniform choice before scoring.
double binary_em(const std::optional<std::string>& pred,
                 const std::vector<std::string>& golds,
                 const std::vector<std::string>& choices,
                 const MetricConfig& config);

/// First numeric quantity in the text. Handles digit-group commas,
/// scientific notation, and an immediately following magnitude word
/// (thousand, million, billion, trillion).
std::optional<double> parse_quantity(std::string_view s);

struct OomScore {
    double score = 0.0;
    bool parse_warning = false;  // pred missing, unparseable, or non-positive
};

/// max(0, 1 - (1/3)*|log10(pred/gold)|). The Fermi metric is defined
/// externally; the formula is isolated here so it can be swapped in one
/// place if the external definition turns out to differ.
OomScore order_of_magnitude_score(const std::optional<std::string>& pred, double gold);

struct ScoreResult {
    double score = 0.0;
    bool parse_warning = false;
    bool abstained = false;
};

/// Full per-example dispatch: abstain policy first (seed decorrelated by
/// example id), then the configured metric. Gold parse failures on numeric
/// examples are configuration errors.
ScoreResult score_answer(const std::optional<std::string>& answer, const Example& example,
                         const MetricConfig& config);

double mean_of(const std::vector<double>& xs);
double population_std(const std::vector<double>& xs);

/// Mean-of-run-means with population std across runs.
struct RunAggregate {
    double mean = 0.0;
    double std_dev = 0.0;
    std::vector<double> run_means;
};

/// Every run must score the same example set (same count here; ids are
/// checked by the harness before scores reach this point).
RunAggregate aggregate_runs(const std::vector<std::vector<double>>& per_run_scores);

}  // namespace metachain::evaluation
