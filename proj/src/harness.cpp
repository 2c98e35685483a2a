#include "metachain/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "metachain/aggregation.hpp"
#include "metachain/chain_generator.hpp"
#include "metachain/meta_reasoner.hpp"
#include "metachain/prompt_registry.hpp"
#include "metachain/text.hpp"

namespace fs = std::filesystem;

namespace metachain::harness {

namespace {

json metric_to_json(const evaluation::MetricConfig& m) {
    return json{{"kind", evaluation::metric_kind_name(m.kind)},
                {"abstain_policy", evaluation::abstain_policy_name(m.abstain_policy)},
                {"random_label_seed", m.random_label_seed}};
}

evaluation::MetricConfig metric_from_json(const json& j) {
    evaluation::MetricConfig m;
    if (j.contains("kind")) m.kind = evaluation::metric_kind_from_name(j.at("kind"));
    if (j.contains("abstain_policy"))
        m.abstain_policy = evaluation::abstain_policy_from_name(j.at("abstain_policy"));
    m.random_label_seed = j.value("random_label_seed", std::uint64_t{0});
    return m;
}

std::string fixed6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

ValueStats stats_of(const std::vector<double>& xs) {
    if (xs.empty()) return {};
    return {evaluation::mean_of(xs), evaluation::population_std(xs),
            static_cast<int>(xs.size())};
}

bool is_meta_kind(StrategyKind k) {
    return k == StrategyKind::scr || k == StrategyKind::mcr || k == StrategyKind::mcr_sc;
}

}  // namespace

void to_json(json& j, const ExperimentConfig& v) {
    std::vector<std::string> tokens;
    for (const auto& s : v.strategies) tokens.push_back(strategy_token(s));
    j = json{{"dataset", v.dataset},
             {"dataset_path", v.dataset_path},
             {"strategies", tokens},
             {"k_chains", v.k_chains},
             {"runs", v.runs},
             {"seeds", v.seeds},
             {"prompt_root", v.prompt_root},
             {"prompt_set", v.prompt_set},
             {"all_facts_meta", v.all_facts_meta},
             {"backend", v.backend},
             {"fixtures_path", v.fixtures_path},
             {"model", v.model},
             {"cache_dir", v.cache_dir},
             {"retrieval", v.retrieval},
             {"sample_temperature", v.sample_temperature},
             {"max_steps", v.max_steps},
             {"max_tokens", v.max_tokens},
             {"workers", v.workers},
             {"subsample_seed", v.subsample_seed},
             {"analysis", v.analysis}};
    if (v.sample_size) j["sample_size"] = *v.sample_size;
    if (v.metric) j["metric"] = metric_to_json(*v.metric);
}

void from_json(const json& j, ExperimentConfig& v) {
    v.dataset = j.value("dataset", "");
    v.dataset_path = j.value("dataset_path", "");
    if (j.contains("sample_size") && !j.at("sample_size").is_null())
        v.sample_size = j.at("sample_size").get<int>();
    v.strategies.clear();
    for (const auto& token : j.value("strategies", std::vector<std::string>{}))
        v.strategies.push_back(parse_strategy(token));
    v.k_chains = j.value("k_chains", 5);
    v.runs = j.value("runs", 3);
    v.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    v.prompt_root = j.value("prompt_root", "prompts");
    v.prompt_set = j.value("prompt_set", "default");
    v.all_facts_meta = j.value("all_facts_meta", false);
    v.backend = j.value("backend", "scripted");
    v.fixtures_path = j.value("fixtures_path", "");
    v.model = j.value("model", "");
    v.cache_dir = j.value("cache_dir", "");
    if (j.contains("retrieval")) v.retrieval = j.at("retrieval").get<retrieval::RetrievalConfig>();
    if (j.contains("metric") && !j.at("metric").is_null())
        v.metric = metric_from_json(j.at("metric"));
    v.sample_temperature = j.value("sample_temperature", 0.7);
    v.max_steps = j.value("max_steps", 8);
    v.max_tokens = j.value("max_tokens", backend::kDefaultMaxTokens);
    v.workers = j.value("workers", 4);
    v.subsample_seed = j.value("subsample_seed", std::uint64_t{2023});
    v.analysis = j.value("analysis", false);
}

void validate(ExperimentConfig& config) {
    if (config.dataset.empty()) throw ConfigError("config: dataset is required");
    if (config.strategies.empty()) throw ConfigError("config: at least one strategy is required");
    if (config.k_chains < 1) throw ConfigError("config: k_chains must be >= 1");
    if (config.runs < 1) throw ConfigError("config: runs must be >= 1");
    if (config.sample_size && *config.sample_size < 1)
        throw ConfigError("config: sample_size must be positive");
    if (config.workers < 1) throw ConfigError("config: workers must be >= 1");
    if (config.backend != "scripted" && config.backend != "http")
        throw ConfigError("config: unknown backend \"" + config.backend +
                          "\" (expected scripted or http)");
    for (const auto& s : config.strategies) {
        if (s.kind == StrategyKind::sc && s.k > config.k_chains) {
            throw ConfigError("config: " + strategy_token(s) + " needs k <= k_chains (" +
                              std::to_string(config.k_chains) + ")");
        }
    }
    if (config.seeds.empty()) {
        for (int r = 0; r < config.runs; ++r) config.seeds.push_back(r + 1);
    } else if (static_cast<int>(config.seeds.size()) < config.runs) {
        throw ConfigError("config: " + std::to_string(config.seeds.size()) + " seeds for " +
                          std::to_string(config.runs) + " runs");
    }
    config.seeds.resize(config.runs);
    if (config.analysis) {
        bool has_mcr = false, has_scr = false;
        for (const auto& s : config.strategies) {
            has_mcr |= s.kind == StrategyKind::mcr;
            has_scr |= s.kind == StrategyKind::scr;
        }
        if (!has_mcr || !has_scr)
            throw ConfigError("config: analysis needs both mcr and scr among the strategies");
    }
}

std::vector<Example> load_dataset(const std::string& path, ExperimentConfig& config) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset: " + path);
    std::vector<Example> examples;
    std::map<std::string, int> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        Example ex;
        try {
            ex = json::parse(line).get<Example>();
        } catch (const json::exception& e) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (ex.id.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": missing id");
        if (ex.question.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": missing question");
        if (ex.gold_answers.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": missing gold_answers");
        auto [it, inserted] = seen_ids.emplace(ex.id, line_no);
        if (!inserted) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate id \"" + ex.id +
                              "\" (first at line " + std::to_string(it->second) + ")");
        }
        if (ex.dataset.empty()) ex.dataset = config.dataset;
        examples.push_back(std::move(ex));
    }
    if (examples.empty()) throw ConfigError(path + ": dataset is empty");

    // Numeric-estimation questions carry their measurement unit in the text
    // and skip retrieval for the original question, which is rarely a
    // searchable fact.
    bool numeric = std::all_of(examples.begin(), examples.end(), [](const Example& e) {
        return e.answer_kind == AnswerKind::numeric;
    });
    if (numeric) {
        config.retrieval.retrieve_for_original_question = false;
        for (auto& ex : examples) {
            if (ex.units && !ex.units->empty())
                ex.question += " (answer in " + *ex.units + ")";
        }
    }
    if (!config.metric) config.metric = evaluation::default_metric_for(examples[0].answer_kind);

    if (config.sample_size) {
        auto n = static_cast<std::size_t>(*config.sample_size);
        if (n >= examples.size()) {
            if (n > examples.size()) {
                std::cerr << "[metachain] sample_size " << n << " exceeds dataset size "
                          << examples.size() << "; using the whole set\n";
            }
        } else {
            std::vector<std::size_t> indices(examples.size());
            for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
            std::mt19937_64 rng(config.subsample_seed);
            std::shuffle(indices.begin(), indices.end(), rng);
            indices.resize(n);
            std::sort(indices.begin(), indices.end());
            std::vector<Example> sampled;
            sampled.reserve(n);
            for (std::size_t i : indices) sampled.push_back(std::move(examples[i]));
            examples = std::move(sampled);
        }
    }
    return examples;
}

void to_json(json& j, const PredictionRow& v) {
    j = json{{"run", v.run},
             {"example_id", v.example_id},
             {"strategy", strategy_token(v.strategy)},
             {"score", v.score},
             {"abstained", v.abstained},
             {"parse_warning", v.parse_warning},
             {"failed", v.failed},
             {"chains_used", v.chains_used}};
    if (v.answer) j["answer"] = *v.answer;
    if (v.explanation) j["explanation"] = *v.explanation;
}

void from_json(const json& j, PredictionRow& v) {
    v.run = j.value("run", 0);
    v.example_id = j.at("example_id").get<std::string>();
    v.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("answer") && !j.at("answer").is_null())
        v.answer = j.at("answer").get<std::string>();
    if (j.contains("explanation") && !j.at("explanation").is_null())
        v.explanation = j.at("explanation").get<std::string>();
    v.score = j.value("score", 0.0);
    v.abstained = j.value("abstained", false);
    v.parse_warning = j.value("parse_warning", false);
    v.failed = j.value("failed", false);
    v.chains_used = j.value("chains_used", std::vector<ChainId>{});
}

namespace {

json value_stats_json(const ValueStats& v) {
    return json{{"mean", v.mean}, {"std", v.std_dev}, {"count", v.count}};
}

}  // namespace

void to_json(json& j, const TokenStats& v) {
    j = json{{"decomposition_steps", value_stats_json(v.decomposition_steps)},
             {"output_tokens", value_stats_json(v.output_tokens)},
             {"retrieval_tokens", value_stats_json(v.retrieval_tokens)},
             {"meta_prompt_tokens", value_stats_json(v.meta_prompt_tokens)}};
}

void to_json(json& j, const ChainSetRecord& v) {
    j = json{{"example_id", v.example_id}, {"chains", v.chains}};
}

void from_json(const json& j, ChainSetRecord& v) {
    v.example_id = j.at("example_id").get<std::string>();
    v.chains = j.at("chains").get<std::vector<ReasoningChain>>();
}

namespace {

/// Everything produced for one example within one run.
struct ExampleOutcome {
    std::vector<PredictionRow> rows;  // one per strategy, config order
    std::vector<double> chain_steps;
    std::vector<double> chain_output_tokens;
    std::vector<double> chain_retrieval_tokens;
    std::optional<double> meta_prompt_tokens;
    std::optional<Prediction> mcr_prediction;  // analysis inputs
    std::optional<double> mcr_score;
    std::optional<double> scr_score;
    std::vector<ReasoningChain> primary_chains;
};

struct PreparedSpecs {
    chain_generator::DecompositionPromptSpec decomposition;
    std::optional<meta_reasoner::MetaPromptSpec> meta_qa;
    std::optional<meta_reasoner::MetaPromptSpec> meta_ev;

    const meta_reasoner::MetaPromptSpec& for_variant(ContextVariant v) const {
        const auto& slot = v == ContextVariant::evidence_pairs ? meta_ev : meta_qa;
        if (!slot) throw ConfigError("no meta prompt loaded for the requested context variant");
        return *slot;
    }
};

PreparedSpecs prepare_specs(const ExperimentConfig& config) {
    auto prompt_set =
        prompt_registry::load_prompt_set(config.prompt_root, config.prompt_set, config.dataset);
    PreparedSpecs specs;
    specs.decomposition = prompt_set.decomposition_spec();
    for (const auto& s : config.strategies) {
        if (!is_meta_kind(s.kind)) continue;
        auto& slot = s.variant == ContextVariant::evidence_pairs ? specs.meta_ev : specs.meta_qa;
        if (!slot) {
            bool all_facts = config.all_facts_meta && s.variant == ContextVariant::qa_pairs;
            slot = prompt_set.meta_spec(s.variant, all_facts);
            slot->max_tokens = config.max_tokens;
        }
    }
    return specs;
}

/// The strategy whose meta prompt the token statistics report: the first
/// multi-chain one, else the first single-chain one.
const Strategy* stats_meta_strategy(const std::vector<Strategy>& strategies) {
    for (const auto& s : strategies)
        if (s.kind == StrategyKind::mcr || s.kind == StrategyKind::mcr_sc) return &s;
    for (const auto& s : strategies)
        if (s.kind == StrategyKind::scr) return &s;
    return nullptr;
}

RunReport run_experiment_impl(ExperimentConfig config, std::vector<Example> examples,
                              backend::Backend& backend, retrieval::Retriever& retriever) {
    PreparedSpecs specs = prepare_specs(config);
    const evaluation::MetricConfig metric = *config.metric;

    chain_generator::ChainGenConfig gen_config;
    gen_config.k_chains = config.k_chains;
    gen_config.sample_temperature = config.sample_temperature;
    gen_config.max_steps = config.max_steps;
    gen_config.max_tokens = config.max_tokens;
    gen_config.retrieval = config.retrieval;

    int extra_sets = 0;
    for (const auto& s : config.strategies) {
        if (s.kind == StrategyKind::mcr_sc) extra_sets = std::max(extra_sets, s.k - 1);
    }
    const int total_sets = 1 + extra_sets;
    const Strategy* stats_strategy = stats_meta_strategy(config.strategies);

    RunReport report;
    report.example_count = static_cast<int>(examples.size());

    auto process_example = [&](const Example& ex, std::uint64_t run_seed,
                               bool keep_chains) -> ExampleOutcome {
        ExampleOutcome out;
        std::uint64_t example_seed = mix64(run_seed ^ text::fnv1a64(ex.id));

        std::vector<std::vector<ReasoningChain>> sets;
        sets.reserve(total_sets);
        for (int s = 0; s < total_sets; ++s) {
            sets.push_back(chain_generator::sample_chains(ex.question, specs.decomposition,
                                                          gen_config, backend, retriever, ex.id,
                                                          example_seed, s * config.k_chains));
        }
        const auto& primary = sets[0];

        for (const auto& chain : primary) {
            out.chain_steps.push_back(static_cast<double>(chain.steps.size()));
            out.chain_output_tokens.push_back(static_cast<double>(
                backend::count_tokens(chain.raw_transcript, backend.profile())));
            int retrieved = 0;
            if (chain.question_evidence)
                retrieved += backend::count_tokens(chain.question_evidence->rendered(),
                                                   backend.profile());
            for (const auto& step : chain.steps) {
                if (step.evidence)
                    retrieved += backend::count_tokens(step.evidence->rendered(),
                                                       backend.profile());
            }
            out.chain_retrieval_tokens.push_back(static_cast<double>(retrieved));
        }
        if (stats_strategy) {
            const auto& spec = specs.for_variant(stats_strategy->variant);
            std::vector<ReasoningChain> basis =
                stats_strategy->kind == StrategyKind::scr
                    ? std::vector<ReasoningChain>{primary.front()}
                    : primary;
            auto context =
                meta_reasoner::build_multichain_context(basis, stats_strategy->variant);
            auto prompt = meta_reasoner::build_meta_prompt(ex.question, context, spec);
            out.meta_prompt_tokens = static_cast<double>(backend::count_tokens(
                backend::trim_prompt(prompt, backend.profile(), spec.max_tokens),
                backend.profile()));
        }

        for (const auto& strategy : config.strategies) {
            Prediction pred;
            bool failed = false;
            try {
                switch (strategy.kind) {
                    case StrategyKind::self_ask:
                        pred = aggregation::self_ask_answer(
                            primary, mix64(example_seed ^ text::fnv1a64("self_ask")));
                        break;
                    case StrategyKind::sc:
                        pred = aggregation::self_consistency(primary, strategy.k);
                        break;
                    case StrategyKind::scr:
                        pred = meta_reasoner::run_scr(ex.question, primary,
                                                      specs.for_variant(strategy.variant),
                                                      backend, strategy.variant);
                        break;
                    case StrategyKind::mcr:
                        pred = meta_reasoner::run_mcr(ex.question, primary,
                                                      specs.for_variant(strategy.variant),
                                                      backend, strategy.variant);
                        break;
                    case StrategyKind::mcr_sc: {
                        std::vector<std::vector<ReasoningChain>> slice(
                            sets.begin(), sets.begin() + strategy.k);
                        pred = aggregation::mcr_plus_sc(ex.question, slice,
                                                        specs.for_variant(strategy.variant),
                                                        backend, strategy.variant);
                        break;
                    }
                    case StrategyKind::oracle:
                        pred = aggregation::oracle_prediction(primary, ex, metric);
                        break;
                }
            } catch (const TransportError&) {
                pred = Prediction{std::nullopt, std::nullopt, strategy, {}};
                failed = true;
            }
            auto scored = evaluation::score_answer(pred.answer, ex, metric);
            PredictionRow row;
            row.example_id = ex.id;
            row.strategy = strategy;
            row.answer = pred.answer;
            row.explanation = pred.explanation;
            row.score = scored.score;
            row.abstained = scored.abstained;
            row.parse_warning = scored.parse_warning;
            row.failed = failed;
            row.chains_used = pred.chains_used;
            out.rows.push_back(std::move(row));

            if (strategy.kind == StrategyKind::mcr && !out.mcr_prediction) {
                out.mcr_prediction = pred;
                out.mcr_score = scored.score;
            }
            if (strategy.kind == StrategyKind::scr && !out.scr_score)
                out.scr_score = scored.score;
        }
        if (keep_chains) out.primary_chains = primary;
        return out;
    };

    // Token statistics pools, filled across all runs.
    std::vector<double> all_steps, all_output, all_retrieval, all_meta_prompt;
    // scores[strategy][run][example]
    std::vector<std::vector<std::vector<double>>> scores(
        config.strategies.size(),
        std::vector<std::vector<double>>(config.runs));
    std::vector<ExampleOutcome> run0_outcomes;

    for (int run = 0; run < config.runs; ++run) {
        std::uint64_t run_seed = config.seeds[run];
        bool keep_chains = run == 0;
        std::vector<ExampleOutcome> outcomes(examples.size());

        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= examples.size()) return;
                try {
                    outcomes[i] = process_example(examples[i], run_seed, keep_chains);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::size_t worker_count =
            std::min<std::size_t>(static_cast<std::size_t>(config.workers), examples.size());
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < worker_count; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);

        for (std::size_t i = 0; i < outcomes.size(); ++i) {
            auto& out = outcomes[i];
            for (std::size_t s = 0; s < config.strategies.size(); ++s) {
                out.rows[s].run = run;
                scores[s][run].push_back(out.rows[s].score);
                report.rows.push_back(out.rows[s]);
            }
            all_steps.insert(all_steps.end(), out.chain_steps.begin(), out.chain_steps.end());
            all_output.insert(all_output.end(), out.chain_output_tokens.begin(),
                              out.chain_output_tokens.end());
            all_retrieval.insert(all_retrieval.end(), out.chain_retrieval_tokens.begin(),
                                 out.chain_retrieval_tokens.end());
            if (out.meta_prompt_tokens) all_meta_prompt.push_back(*out.meta_prompt_tokens);
        }
        if (keep_chains) run0_outcomes = std::move(outcomes);
    }

    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
        report.results.push_back(
            StrategyResult{config.strategies[s], evaluation::aggregate_runs(scores[s])});
    }
    report.token_stats.decomposition_steps = stats_of(all_steps);
    report.token_stats.output_tokens = stats_of(all_output);
    report.token_stats.retrieval_tokens = stats_of(all_retrieval);
    report.token_stats.meta_prompt_tokens = stats_of(all_meta_prompt);

    for (std::size_t i = 0; i < examples.size(); ++i) {
        report.chain_sets.push_back(
            ChainSetRecord{examples[i].id, std::move(run0_outcomes[i].primary_chains)});
    }

    if (config.analysis) {
        AnalysisBlock block;
        std::vector<Prediction> mcr_preds;
        std::vector<ReasoningChain> greedy_chains;
        std::vector<double> mcr_scores, scr_scores;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            const auto& out = run0_outcomes[i];
            if (!out.mcr_prediction || !out.scr_score) continue;
            mcr_preds.push_back(*out.mcr_prediction);
            greedy_chains.push_back(report.chain_sets[i].chains.front());
            mcr_scores.push_back(*out.mcr_score);
            scr_scores.push_back(*out.scr_score);
            if (out.mcr_prediction->explanation) {
                AnalysisRow row;
                row.example_id = examples[i].id;
                row.bin = analysis::bin_similarity(*out.mcr_prediction->explanation,
                                                   report.chain_sets[i].chains.front());
                row.combination = analysis::detect_combination(
                    *out.mcr_prediction->explanation, report.chain_sets[i].chains);
                block.rows.push_back(std::move(row));
            }
        }
        block.similarity =
            analysis::similarity_report(mcr_preds, greedy_chains, mcr_scores, scr_scores);
        report.analysis = std::move(block);
    }

    report.config = std::move(config);
    return report;
}

}  // namespace

RunReport run_experiment(ExperimentConfig config, backend::Backend& backend,
                         retrieval::Retriever& retriever) {
    validate(config);
    auto examples = load_dataset(config.dataset_path, config);
    return run_experiment_impl(std::move(config), std::move(examples), backend, retriever);
}

RunReport run_experiment(ExperimentConfig config) {
    validate(config);
    auto examples = load_dataset(config.dataset_path, config);

    std::unique_ptr<backend::Backend> backend;
    if (config.backend == "scripted") {
        auto scripted = std::make_unique<backend::ScriptedBackend>();
        if (!config.fixtures_path.empty()) scripted->load_fixtures(config.fixtures_path);
        backend = std::move(scripted);
    } else {
        backend::HttpBackendOptions options;
        if (!config.model.empty()) options.model = config.model;
        options.cache_dir = config.cache_dir;
        backend = std::make_unique<backend::HttpBackend>(options);
    }
    auto retriever = retrieval::make_retriever(config.retrieval);
    return run_experiment_impl(std::move(config), std::move(examples), *backend, *retriever);
}

std::string report_summary_json(const RunReport& report) {
    json summary;
    summary["dataset"] = report.config.dataset;
    summary["prompt_set"] = report.config.prompt_set;
    summary["example_count"] = report.example_count;
    summary["runs"] = report.config.runs;
    summary["seeds"] = report.config.seeds;
    summary["k_chains"] = report.config.k_chains;
    summary["metric"] = metric_to_json(*report.config.metric);
    json strategies = json::array();
    for (const auto& result : report.results) {
        strategies.push_back(json{{"strategy", strategy_token(result.strategy)},
                                  {"mean", result.aggregate.mean},
                                  {"std", result.aggregate.std_dev},
                                  {"run_means", result.aggregate.run_means}});
    }
    summary["strategies"] = strategies;
    summary["token_stats"] = report.token_stats;
    if (report.analysis) {
        json rows = json::array();
        int combinations = 0;
        for (const auto& row : report.analysis->rows) {
            rows.push_back(json{{"example_id", row.example_id},
                                {"bin", analysis::similarity_bin_name(row.bin)},
                                {"combination", row.combination}});
            if (row.combination) ++combinations;
        }
        summary["analysis"] = json{{"similarity", report.analysis->similarity},
                                   {"combination_count", combinations},
                                   {"rows", rows}};
    }
    return summary.dump(2) + "\n";
}

void emit_report(const RunReport& report, const std::string& out_dir) {
    fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw ConfigError("cannot create output directory: " + out_dir);

    {
        std::ofstream out(dir / "summary.json", std::ios::binary);
        if (!out) throw ConfigError("cannot write " + (dir / "summary.json").string());
        out << report_summary_json(report);
    }
    {
        std::ofstream out(dir / "per_example.csv", std::ios::binary);
        if (!out) throw ConfigError("cannot write " + (dir / "per_example.csv").string());
        out << "run,example_id,strategy,score,abstained,parse_warning,failed,answer,chains\n";
        for (const auto& row : report.rows) {
            std::string chains;
            for (const auto& id : row.chains_used) {
                if (!chains.empty()) chains += ';';
                chains += std::to_string(id.index);
            }
            out << row.run << ',' << csv_escape(row.example_id) << ','
                << strategy_token(row.strategy) << ',' << fixed6(row.score) << ','
                << (row.abstained ? 1 : 0) << ',' << (row.parse_warning ? 1 : 0) << ','
                << (row.failed ? 1 : 0) << ',' << csv_escape(row.answer.value_or("")) << ','
                << chains << '\n';
        }
    }
    write_jsonl_file((dir / "predictions.jsonl").string(), report.rows);
    write_jsonl_file((dir / "chains.jsonl").string(), report.chain_sets);
    if (report.analysis) {
        std::ofstream out(dir / "analysis.csv", std::ios::binary);
        if (!out) throw ConfigError("cannot write " + (dir / "analysis.csv").string());
        out << "example_id,bin,combination\n";
        for (const auto& row : report.analysis->rows) {
            out << csv_escape(row.example_id) << ',' << analysis::similarity_bin_name(row.bin)
                << ',' << (row.combination ? 1 : 0) << '\n';
        }
    }
}

std::string render_summary_table(const json& summary) {
    std::ostringstream out;
    out << "dataset: " << summary.value("dataset", "?")
        << "  examples: " << summary.value("example_count", 0)
        << "  runs: " << summary.value("runs", 0)
        << "  k: " << summary.value("k_chains", 0) << "\n\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %8s %8s\n", "strategy", "mean", "std");
    out << buf;
    for (const auto& row : summary.value("strategies", json::array())) {
        std::snprintf(buf, sizeof buf, "%-12s %8.3f %8.3f\n",
                      row.value("strategy", "?").c_str(), row.value("mean", 0.0),
                      row.value("std", 0.0));
        out << buf;
    }
    if (summary.contains("token_stats")) {
        const auto& stats = summary.at("token_stats");
        out << "\ntoken statistics (mean \xc2\xb1 std):\n";
        for (const char* key : {"decomposition_steps", "output_tokens", "retrieval_tokens",
                                "meta_prompt_tokens"}) {
            const auto& entry = stats.at(key);
            std::snprintf(buf, sizeof buf, "  %-20s %8.1f \xc2\xb1 %-8.1f (n=%d)\n", key,
                          entry.value("mean", 0.0), entry.value("std", 0.0),
                          entry.value("count", 0));
            out << buf;
        }
    }
    if (summary.contains("analysis")) {
        out << "\nexplanation similarity to the greedy chain:\n";
        std::snprintf(buf, sizeof buf, "  %-10s %6s %12s %12s\n", "bin", "count", "mcr", "scr");
        out << buf;
        for (const auto& row : summary.at("analysis").at("similarity")) {
            if (row.value("count", 0) == 0) {
                std::snprintf(buf, sizeof buf, "  %-10s %6d %12s %12s\n",
                              row.value("bin", "?").c_str(), 0, "-", "-");
            } else {
                char mcr[40], scr[40];
                std::snprintf(mcr, sizeof mcr, "%.3f\xc2\xb1%.3f", row.value("mcr_mean", 0.0),
                              row.value("mcr_std", 0.0));
                std::snprintf(scr, sizeof scr, "%.3f\xc2\xb1%.3f", row.value("scr_mean", 0.0),
                              row.value("scr_std", 0.0));
                std::snprintf(buf, sizeof buf, "  %-10s %6d %12s %12s\n",
                              row.value("bin", "?").c_str(), row.value("count", 0), mcr, scr);
            }
            out << buf;
        }
        out << "  combinations detected: "
            << summary.at("analysis").value("combination_count", 0) << "\n";
    }
    return out.str();
}

std::vector<StrategyResult> score_rows(std::vector<PredictionRow>& rows,
                                       const std::vector<Example>& examples,
                                       const evaluation::MetricConfig& metric) {
    std::map<std::string, const Example*> by_id;
    for (const auto& ex : examples) by_id[ex.id] = &ex;

    // strategy token -> run -> scores, orders preserved for aggregation.
    std::vector<std::string> strategy_order;
    std::map<std::string, std::map<int, std::vector<double>>> grouped;
    std::map<std::string, Strategy> strategy_by_token;
    for (auto& row : rows) {
        auto it = by_id.find(row.example_id);
        if (it == by_id.end())
            throw ConfigError("predictions reference unknown example id: " + row.example_id);
        auto scored = evaluation::score_answer(row.answer, *it->second, metric);
        row.score = scored.score;
        row.abstained = scored.abstained;
        row.parse_warning = scored.parse_warning;
        std::string token = strategy_token(row.strategy);
        if (!grouped.count(token)) strategy_order.push_back(token);
        strategy_by_token.emplace(token, row.strategy);
        grouped[token][row.run].push_back(scored.score);
    }
    std::vector<StrategyResult> results;
    for (const auto& token : strategy_order) {
        std::vector<std::vector<double>> per_run;
        for (auto& [run, run_scores] : grouped[token]) per_run.push_back(run_scores);
        results.push_back(
            StrategyResult{strategy_by_token.at(token), evaluation::aggregate_runs(per_run)});
    }
    return results;
}

}  // namespace metachain::harness
