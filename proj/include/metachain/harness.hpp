#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metachain/analysis.hpp"
#include "metachain/backend.hpp"
#include "metachain/core.hpp"
#include "metachain/evaluation.hpp"
#include "metachain/retrieval.hpp"

namespace metachain::harness {

struct ExperimentConfig {
    std::string dataset;
    std::string dataset_path;
    std::optional<int> sample_size;
    std::vector<Strategy> strategies;
    int k_chains = 5;
    int runs = 3;
    /// One seed per run. Empty defaults to 1..runs; shorter than runs is an
    /// error, longer is truncated.
    std::vector<std::uint64_t> seeds;
    std::string prompt_root = "prompts";
    std::string prompt_set = "default";
    bool all_facts_meta = false;  // alternate fact-verification explanation style

    std::string backend = "scripted";  // "scripted" or "http"
    std::string fixtures_path;         // scripted completions (JSONL)
    std::string model;                 // http; empty falls back to env/default
    std::string cache_dir;             // http response cache directory

    retrieval::RetrievalConfig retrieval;
    /// Filled from the dataset's answer kind when absent.
    std::optional<evaluation::MetricConfig> metric;

    double sample_temperature = 0.7;
    int max_steps = 8;
    int max_tokens = backend::kDefaultMaxTokens;
    int workers = 4;
    /// Dev subsets are seeded draws; the published experiments sample
    /// 500-1000 examples without publishing ids, so the seed is pinned here.
    std::uint64_t subsample_seed = 2023;
    bool analysis = false;  // emit explanation-similarity and combination tables
};

void to_json(json& j, const ExperimentConfig& v);
void from_json(const json& j, ExperimentConfig& v);

/// Structural checks: non-empty strategies, sc@k within k_chains, seeds
/// covering runs (after defaulting), known backend name, analysis only when
/// both mcr and scr run. Throws ConfigError; fills defaulted seeds.
void validate(ExperimentConfig& config);

/// Reads the JSONL dataset, rejecting malformed rows with their line number,
/// then applies per-dataset defaults to the config (numeric-units datasets
/// turn off original-question retrieval and append the units to the question
/// text; the metric defaults from the answer kind) and finally draws the
/// seeded subsample when sample_size is set.
std::vector<Example> load_dataset(const std::string& path, ExperimentConfig& config);

struct StrategyResult {
    Strategy strategy;
    evaluation::RunAggregate aggregate;
};

struct PredictionRow {
    int run = 0;
    std::string example_id;
    Strategy strategy;
    std::optional<std::string> answer;
    std::optional<std::string> explanation;
    double score = 0.0;
    bool abstained = false;
    bool parse_warning = false;
    bool failed = false;  // transport gave up; scored under the abstain rule
    std::vector<ChainId> chains_used;
};

void to_json(json& j, const PredictionRow& v);
void from_json(const json& j, PredictionRow& v);

struct ValueStats {
    double mean = 0.0;
    double std_dev = 0.0;
    int count = 0;
};

/// Sequence-length bookkeeping over all sampled chains: steps per chain,
/// generated tokens per chain, retrieved-evidence tokens per chain, and the
/// meta-reasoner prompt tokens per example.
struct TokenStats {
    ValueStats decomposition_steps;
    ValueStats output_tokens;
    ValueStats retrieval_tokens;
    ValueStats meta_prompt_tokens;
};

void to_json(json& j, const TokenStats& v);

struct AnalysisRow {
    std::string example_id;
    analysis::SimilarityBin bin = analysis::SimilarityBin::Low;
    bool combination = false;
};

struct AnalysisBlock {
    std::vector<analysis::SimilarityRow> similarity;
    std::vector<AnalysisRow> rows;
};

/// First-run chain sets, kept for the analyze subcommand.
struct ChainSetRecord {
    std::string example_id;
    std::vector<ReasoningChain> chains;
};

void to_json(json& j, const ChainSetRecord& v);
void from_json(const json& j, ChainSetRecord& v);

struct RunReport {
    ExperimentConfig config;
    int example_count = 0;
    std::vector<StrategyResult> results;   // config strategy order
    std::vector<PredictionRow> rows;       // run, then example, then strategy
    TokenStats token_stats;
    std::optional<AnalysisBlock> analysis;
    std::vector<ChainSetRecord> chain_sets;
};

/// Builds the backend and retriever from the config, then delegates.
RunReport run_experiment(ExperimentConfig config);

/// Core loop with injected transport, for tests and custom wiring. Chains
/// are sampled once per example and run, and every strategy is scored on
/// that same set (plus the extra sets mcr_sc@r draws). Per-example transport
/// failures score as abstentions; they never abort the run. The caller is
/// responsible for a retriever consistent with config.retrieval.
RunReport run_experiment(ExperimentConfig config, backend::Backend& backend,
                         retrieval::Retriever& retriever);

/// The exact bytes of summary.json: strategy aggregates, token statistics,
/// and the analysis block when present. Field order is fixed and nothing
/// time- or host-dependent is included, so identical runs serialize
/// identically.
std::string report_summary_json(const RunReport& report);

/// Writes summary.json, per_example.csv, predictions.jsonl, chains.jsonl,
/// and analysis.csv (when present) under out_dir.
void emit_report(const RunReport& report, const std::string& out_dir);

/// Plain-text table for a summary.json payload.
std::string render_summary_table(const json& summary);

/// Scores prediction rows (from predictions.jsonl) against a dataset,
/// re-aggregating per strategy. Used by the score subcommand.
std::vector<StrategyResult> score_rows(std::vector<PredictionRow>& rows,
                                       const std::vector<Example>& examples,
                                       const evaluation::MetricConfig& metric);

}  // namespace metachain::harness
