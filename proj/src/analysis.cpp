#include "metachain/analysis.hpp"

#include <map>
#include <stdexcept>

#include "metachain/evaluation.hpp"
#include "metachain/text.hpp"

namespace metachain::analysis {

std::string similarity_bin_name(SimilarityBin bin) {
    switch (bin) {
        case SimilarityBin::Low: return "Low";
        case SimilarityBin::Medium: return "Medium";
        case SimilarityBin::High: return "High";
        case SimilarityBin::Identical: return "Identical";
    }
    throw std::logic_error("unhandled SimilarityBin");
}

namespace {

const char* error_category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::Valid: return "Valid";
        case ErrorCategory::Decomposition: return "Decomposition";
        case ErrorCategory::Retrieval: return "Retrieval";
        case ErrorCategory::ContradictingFacts: return "ContradictingFacts";
        case ErrorCategory::Explanation: return "Explanation";
        case ErrorCategory::Answer: return "Answer";
    }
    throw std::logic_error("unhandled ErrorCategory");
}

ErrorCategory error_category_from(const std::string& name) {
    for (ErrorCategory c : {ErrorCategory::Valid, ErrorCategory::Decomposition,
                            ErrorCategory::Retrieval, ErrorCategory::ContradictingFacts,
                            ErrorCategory::Explanation, ErrorCategory::Answer}) {
        if (name == error_category_name(c)) return c;
    }
    throw ConfigError("unknown error category: " + name);
}

std::vector<std::string> unigrams(const std::string& text) {
    return text::whitespace_tokens(text::strip_punctuation(text::to_lower(text)));
}

}  // namespace

void to_json(json& j, const ErrorTag& v) {
    j = json{{"label", error_category_name(v.label)}, {"note", v.note}};
}

void from_json(const json& j, ErrorTag& v) {
    v.label = error_category_from(j.at("label").get<std::string>());
    v.note = j.value("note", "");
}

double rouge1_precision(const std::string& candidate, const std::string& reference) {
    auto cand = unigrams(candidate);
    if (cand.empty()) return 0.0;
    std::map<std::string, int> ref_counts;
    for (const auto& tok : unigrams(reference)) ++ref_counts[tok];
    int overlap = 0;
    for (const auto& tok : cand) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return static_cast<double>(overlap) / static_cast<double>(cand.size());
}

std::string rendered_chain_text(const ReasoningChain& chain) {
    std::string out;
    for (const auto& step : chain.steps) {
        if (!out.empty()) out += ' ';
        out += step.intermediate_question;
        out += ' ';
        out += step.intermediate_answer;
    }
    return out;
}

SimilarityBin bin_similarity(const std::string& explanation, const ReasoningChain& greedy_chain) {
    const std::string chain_text = rendered_chain_text(greedy_chain);
    if (text::trim(explanation) == text::trim(chain_text)) return SimilarityBin::Identical;
    double p = rouge1_precision(explanation, chain_text);
    if (p < 1.0 / 3.0) return SimilarityBin::Low;
    if (p < 2.0 / 3.0) return SimilarityBin::Medium;
    return SimilarityBin::High;
}

bool detect_combination(const std::string& explanation,
                        const std::vector<ReasoningChain>& chains) {
    if (chains.size() < 2) return false;
    std::vector<std::string> chain_texts;
    chain_texts.reserve(chains.size());
    for (const auto& c : chains) chain_texts.push_back(rendered_chain_text(c));

    auto sentences = text::split_sentences(explanation);
    // precision[i][j]: sentence i against chain j.
    std::vector<std::vector<double>> precision(sentences.size(),
                                               std::vector<double>(chains.size(), 0.0));
    for (size_t i = 0; i < sentences.size(); ++i)
        for (size_t j = 0; j < chains.size(); ++j)
            precision[i][j] = rouge1_precision(sentences[i], chain_texts[j]);

    for (size_t i = 0; i < sentences.size(); ++i) {
        // Anchor sentence must be similar to exactly one chain.
        size_t anchor_chain = chains.size();
        int similar = 0;
        for (size_t j = 0; j < chains.size(); ++j) {
            if (precision[i][j] > 0.8) {
                ++similar;
                anchor_chain = j;
            }
        }
        if (similar != 1) continue;
        for (size_t i2 = 0; i2 < sentences.size(); ++i2) {
            if (precision[i2][anchor_chain] >= 0.2) continue;
            for (size_t j = 0; j < chains.size(); ++j) {
                if (j != anchor_chain && precision[i2][j] > 0.8) return true;
            }
        }
    }
    return false;
}

void to_json(json& j, const SimilarityRow& v) {
    j = json{{"bin", similarity_bin_name(v.bin)}, {"count", v.count}};
    if (v.mcr_mean) {
        j["mcr_mean"] = *v.mcr_mean;
        j["mcr_std"] = *v.mcr_std;
        j["scr_mean"] = *v.scr_mean;
        j["scr_std"] = *v.scr_std;
    }
}

std::vector<SimilarityRow> similarity_report(const std::vector<Prediction>& mcr_predictions,
                                             const std::vector<ReasoningChain>& greedy_chains,
                                             const std::vector<double>& scores_mcr,
                                             const std::vector<double>& scores_scr) {
    if (mcr_predictions.size() != greedy_chains.size() ||
        mcr_predictions.size() != scores_mcr.size() ||
        mcr_predictions.size() != scores_scr.size()) {
        throw ConfigError("similarity_report inputs have mismatched lengths");
    }
    std::map<SimilarityBin, std::vector<size_t>> members;
    for (size_t i = 0; i < mcr_predictions.size(); ++i) {
        if (!mcr_predictions[i].explanation) continue;
        members[bin_similarity(*mcr_predictions[i].explanation, greedy_chains[i])].push_back(i);
    }
    std::vector<SimilarityRow> rows;
    for (SimilarityBin bin : {SimilarityBin::Identical, SimilarityBin::High,
                              SimilarityBin::Medium, SimilarityBin::Low}) {
        SimilarityRow row;
        row.bin = bin;
        auto it = members.find(bin);
        if (it != members.end() && !it->second.empty()) {
            row.count = static_cast<int>(it->second.size());
            std::vector<double> mcr, scr;
            for (size_t i : it->second) {
                mcr.push_back(scores_mcr[i]);
                scr.push_back(scores_scr[i]);
            }
            row.mcr_mean = evaluation::mean_of(mcr);
            row.mcr_std = evaluation::population_std(mcr);
            row.scr_mean = evaluation::mean_of(scr);
            row.scr_std = evaluation::population_std(scr);
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace metachain::analysis
