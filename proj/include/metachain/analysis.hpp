#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metachain/core.hpp"

namespace metachain::analysis {

enum class SimilarityBin { Low, Medium, High, Identical };

std::string similarity_bin_name(SimilarityBin bin);

/// Error taxonomy for manual annotation; carried as data only.
enum class ErrorCategory { Valid, Decomposition, Retrieval, ContradictingFacts, Explanation, Answer };

struct ErrorTag {
    ErrorCategory label = ErrorCategory::Valid;
    std::string note;
};

void to_json(json& j, const ErrorTag& v);
void from_json(const json& j, ErrorTag& v);

/// Unigram multiset precision of candidate against reference, lowercased and
/// punctuation-stripped. Empty candidate scores 0.
double rouge1_precision(const std::string& candidate, const std::string& reference);

/// Similarity basis: all q_i and a_i of the chain, space-joined, matching
/// what the meta-reasoner saw.
std::string rendered_chain_text(const ReasoningChain& chain);

/// Identical on exact match after trimming; otherwise rouge1_precision
/// binned at 1/3 and 2/3 (Low below, High at or above 2/3).
SimilarityBin bin_similarity(const std::string& explanation, const ReasoningChain& greedy_chain);

/// True iff some explanation sentence is similar (precision > 0.8) to
/// exactly one chain c while another sentence is distinct from c (< 0.2)
/// and similar to a different chain. Sentences are compared against whole
/// rendered chain texts. Always false with fewer than two chains.
bool detect_combination(const std::string& explanation, const std::vector<ReasoningChain>& chains);

struct SimilarityRow {
    SimilarityBin bin = SimilarityBin::Low;
    int count = 0;
    // Absent when the bin is empty.
    std::optional<double> mcr_mean, mcr_std, scr_mean, scr_std;
};

void to_json(json& j, const SimilarityRow& v);

/// Per-bin score breakdown of MCR vs SCR, binned by how similar each MCR
/// explanation is to its greedy chain. Examples without an explanation are
/// skipped. All four bins are always present in the result.
std::vector<SimilarityRow> similarity_report(const std::vector<Prediction>& mcr_predictions,
                                             const std::vector<ReasoningChain>& greedy_chains,
                                             const std::vector<double>& scores_mcr,
                                             const std::vector<double>& scores_scr);

}  // namespace metachain::analysis
