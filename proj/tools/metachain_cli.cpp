#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metachain/analysis.hpp"
#include "metachain/harness.hpp"
#include "metachain/prompt_registry.hpp"
#include "metachain/scripting.hpp"
#include "metachain/text.hpp"

namespace fs = std::filesystem;
using namespace metachain;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string current;
    for (char c : s) {
        if (c == ',') {
            if (!text::trim(current).empty()) out.push_back(text::trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    if (!text::trim(current).empty()) out.push_back(text::trim(current));
    return out;
}

EvidenceSource retriever_backend_from(const std::string& name) {
    if (name == "fixture") return EvidenceSource::fixture;
    if (name == "corpus") return EvidenceSource::local_corpus;
    if (name == "web") return EvidenceSource::web_search;
    throw ConfigError("unknown retriever \"" + name + "\" (expected fixture, corpus, or web)");
}

evaluation::MetricConfig metric_from_flags(const std::string& metric, const std::string& abstain,
                                           std::uint64_t random_seed,
                                           const std::vector<Example>& examples) {
    evaluation::MetricConfig config = evaluation::default_metric_for(examples.front().answer_kind);
    if (!metric.empty()) config.kind = evaluation::metric_kind_from_name(metric);
    if (!abstain.empty()) config.abstain_policy = evaluation::abstain_policy_from_name(abstain);
    config.random_label_seed = random_seed;
    return config;
}

int cmd_run(const std::string& config_path, harness::ExperimentConfig overrides,
            const std::vector<std::string>& explicit_flags, const std::string& out_dir) {
    harness::ExperimentConfig config;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config: " + config_path);
        try {
            config = json::parse(in).get<harness::ExperimentConfig>();
        } catch (const json::exception& e) {
            throw ConfigError(config_path + ": " + e.what());
        }
    }
    auto given = [&](const std::string& flag) {
        return std::find(explicit_flags.begin(), explicit_flags.end(), flag) !=
               explicit_flags.end();
    };
    if (given("dataset")) config.dataset = overrides.dataset;
    if (given("data")) config.dataset_path = overrides.dataset_path;
    if (given("sample-size")) config.sample_size = overrides.sample_size;
    if (given("strategies")) config.strategies = overrides.strategies;
    if (given("k")) config.k_chains = overrides.k_chains;
    if (given("runs")) config.runs = overrides.runs;
    if (given("seeds")) config.seeds = overrides.seeds;
    if (given("prompt-root")) config.prompt_root = overrides.prompt_root;
    if (given("prompt-set")) config.prompt_set = overrides.prompt_set;
    if (given("all-facts-meta")) config.all_facts_meta = overrides.all_facts_meta;
    if (given("backend")) config.backend = overrides.backend;
    if (given("fixtures")) config.fixtures_path = overrides.fixtures_path;
    if (given("model")) config.model = overrides.model;
    if (given("cache-dir")) config.cache_dir = overrides.cache_dir;
    if (given("retriever")) config.retrieval.backend = overrides.retrieval.backend;
    if (given("retrieval-fixtures"))
        config.retrieval.fixtures_path = overrides.retrieval.fixtures_path;
    if (given("corpus")) config.retrieval.corpus_path = overrides.retrieval.corpus_path;
    if (given("retrieval-cache")) config.retrieval.cache_dir = overrides.retrieval.cache_dir;
    if (given("top-k")) config.retrieval.top_k = overrides.retrieval.top_k;
    if (given("temperature")) config.sample_temperature = overrides.sample_temperature;
    if (given("max-steps")) config.max_steps = overrides.max_steps;
    if (given("max-tokens")) config.max_tokens = overrides.max_tokens;
    if (given("workers")) config.workers = overrides.workers;
    if (given("subsample-seed")) config.subsample_seed = overrides.subsample_seed;
    if (given("analysis")) config.analysis = overrides.analysis;

    auto report = harness::run_experiment(std::move(config));
    harness::emit_report(report, out_dir);
    std::cout << harness::render_summary_table(json::parse(harness::report_summary_json(report)));
    std::cout << "\nreport written to " << out_dir << "/\n";
    return 0;
}

int cmd_score(const std::string& predictions_path, const std::string& data_path,
              const std::string& metric, const std::string& abstain, std::uint64_t random_seed,
              const std::string& out_path) {
    auto rows = read_jsonl_file<harness::PredictionRow>(predictions_path);
    auto examples = read_jsonl_file<Example>(data_path);
    if (examples.empty()) throw ConfigError(data_path + ": dataset is empty");
    auto config = metric_from_flags(metric, abstain, random_seed, examples);
    auto results = harness::score_rows(rows, examples, config);

    json out;
    out["metric"] = json{{"kind", evaluation::metric_kind_name(config.kind)},
                         {"abstain_policy", evaluation::abstain_policy_name(config.abstain_policy)}};
    json strategies = json::array();
    for (const auto& result : results) {
        strategies.push_back(json{{"strategy", strategy_token(result.strategy)},
                                  {"mean", result.aggregate.mean},
                                  {"std", result.aggregate.std_dev},
                                  {"run_means", result.aggregate.run_means}});
    }
    out["strategies"] = strategies;
    std::cout << out.dump(2) << "\n";
    if (!out_path.empty()) write_jsonl_file(out_path, rows);
    return 0;
}

int cmd_analyze(const std::string& chains_path, const std::string& predictions_path,
                const std::string& csv_path) {
    auto chain_sets = read_jsonl_file<harness::ChainSetRecord>(chains_path);
    auto rows = read_jsonl_file<harness::PredictionRow>(predictions_path);

    std::map<std::string, const harness::ChainSetRecord*> chains_by_id;
    for (const auto& record : chain_sets) chains_by_id[record.example_id] = &record;
    std::map<std::string, const harness::PredictionRow*> mcr_rows, scr_rows;
    for (const auto& row : rows) {
        if (row.run != 0) continue;
        if (row.strategy.kind == StrategyKind::mcr && !mcr_rows.count(row.example_id))
            mcr_rows[row.example_id] = &row;
        if (row.strategy.kind == StrategyKind::scr && !scr_rows.count(row.example_id))
            scr_rows[row.example_id] = &row;
    }

    std::vector<Prediction> mcr_preds;
    std::vector<ReasoningChain> greedy_chains;
    std::vector<double> mcr_scores, scr_scores;
    json per_example = json::array();
    int combinations = 0;
    for (const auto& [id, record] : chains_by_id) {
        auto mcr_it = mcr_rows.find(id);
        auto scr_it = scr_rows.find(id);
        if (mcr_it == mcr_rows.end() || scr_it == scr_rows.end()) continue;
        if (record->chains.empty()) continue;
        Prediction pred;
        pred.answer = mcr_it->second->answer;
        pred.explanation = mcr_it->second->explanation;
        pred.strategy = mcr_it->second->strategy;
        mcr_preds.push_back(pred);
        greedy_chains.push_back(record->chains.front());
        mcr_scores.push_back(mcr_it->second->score);
        scr_scores.push_back(scr_it->second->score);
        if (pred.explanation) {
            auto bin = analysis::bin_similarity(*pred.explanation, record->chains.front());
            bool combination = analysis::detect_combination(*pred.explanation, record->chains);
            if (combination) ++combinations;
            per_example.push_back(json{{"example_id", id},
                                       {"bin", analysis::similarity_bin_name(bin)},
                                       {"combination", combination}});
        }
    }
    if (mcr_preds.empty())
        throw ConfigError("no example has both an mcr and an scr prediction in run 0");

    auto similarity =
        analysis::similarity_report(mcr_preds, greedy_chains, mcr_scores, scr_scores);
    json out;
    out["similarity"] = similarity;
    out["rows"] = per_example;
    out["combination_count"] = combinations;
    std::cout << out.dump(2) << "\n";

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) throw ConfigError("cannot write " + csv_path);
        csv << "example_id,bin,combination\n";
        for (const auto& row : per_example) {
            csv << row.at("example_id").get<std::string>() << ','
                << row.at("bin").get<std::string>() << ','
                << (row.at("combination").get<bool>() ? 1 : 0) << '\n';
        }
    }
    return 0;
}

int cmd_report(const std::string& summary_path) {
    std::ifstream in(summary_path);
    if (!in) throw ConfigError("cannot open " + summary_path);
    json summary = json::parse(in);
    std::cout << harness::render_summary_table(summary);
    return 0;
}

// ---------------------------------------------------------------------------
// demo: a fully offline end-to-end run. Writes its own dataset, corpus,
// prompt set, and scripted completions under out_dir, then runs every
// strategy on them and prints the summary.

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

const char kDemoDecomposition[] =
    "Given the following question, answer it by providing follow up questions and intermediate "
    "answers. For each follow up question, you are given a context which is the top returned "
    "snippet for the question. If no follow up questions are necessary, answer the question "
    "directly.\n"
    "#\n"
    "Context1: Frost: Frost is a thin layer of ice on a solid surface, which forms from water "
    "vapor in an above-freezing atmosphere coming in contact with a solid surface.\n"
    "Context2: Winter: Winter is the coldest season of the year in polar and temperate zones.\n"
    "Question: Is it common to see frost during some college commencements?\n"
    "Are follow up questions needed here: Yes.\n"
    "Follow up: What seasons can you expect to see frost?\n"
    "Intermediate answer: Frost is common during the winter.\n"
    "Follow up: When is college commencement?\n"
    "Intermediate answer: College commencement ceremonies often happen in December, May, and "
    "June.\n"
    "So the final answer is: Yes.\n"
    "#\n"
    "Context1: Hydrogen: Hydrogen is the chemical element with the symbol H and atomic number "
    "1.\n"
    "Context2: Spice Girls: The group has five members.\n"
    "Question: Hydrogen's atomic number squared exceeds number of Spice Girls?\n"
    "Are follow up questions needed here: Yes.\n"
    "Follow up: What is the atomic number of hydrogen?\n"
    "Intermediate answer: Hydrogen has an atomic number of 1.\n"
    "Follow up: How many people are in the Spice Girls band?\n"
    "Intermediate answer: The Spice Girls has 5 members.\n"
    "So the final answer is: No.\n";

const char kDemoMeta[] =
    "Given a question and a context, provide a Yes or No answer and explain why. If you are "
    "unsure, answer Unknown.\n"
    "#\n"
    "Context:\n"
    "What seasons can you expect to see frost? Frost is common during the winter.\n"
    "When is college commencement? College commencement ceremonies often happen in December, "
    "May, and June.\n"
    "Question:\n"
    "Is it common to see frost during some college commencements?\n"
    "Answer:\n"
    "Frost is common during the winter. College commencement ceremonies often happen in "
    "December, which is in the winter.\n"
    "So the answer is: Yes.\n"
    "#\n"
    "Context:\n"
    "What is the atomic number of hydrogen? Hydrogen has an atomic number of 1.\n"
    "How many people are in the Spice Girls band? The Spice Girls has 5 members.\n"
    "Question:\n"
    "Hydrogen's atomic number squared exceeds number of Spice Girls?\n"
    "Answer:\n"
    "Hydrogen has an atomic number of 1. The square of 1 is 1, which is less than 5.\n"
    "So the answer is: No.\n";

const char kDemoManifest[] =
    "{\n"
    "  \"dataset\": \"strategyqa\",\n"
    "  \"decomposition\": {\"file\": \"decomposition.txt\", \"exemplars\": 2},\n"
    "  \"meta\": {\"file\": \"meta.txt\", \"exemplars\": 2,\n"
    "           \"balanced_labels\": [\"Yes\", \"No\"]}\n"
    "}\n";

struct DemoExample {
    Example example;
    std::vector<scripting::PlannedChain> plans;
    std::string mcr_completion;
    std::string scr_completion;
};

std::vector<DemoExample> demo_examples() {
    std::vector<DemoExample> demos;
    {
        DemoExample d;
        d.example = {"demo-1",
                     "Did Aristotle use a laptop?",
                     {"no"},
                     AnswerKind::binary,
                     std::vector<std::string>{"Yes", "No"},
                     std::nullopt,
                     "strategyqa"};
        d.plans = {
            {{{"When did Aristotle live?", "Aristotle lived from 384 BC to 322 BC."},
              {"When was the laptop invented?", "The laptop was invented in 1981."}},
             "No."},
            {{{"What is a laptop?", "A laptop is a portable personal computer."},
              {"Did computers exist in ancient Greece?",
               "No, computers did not exist in ancient Greece."}},
             "No."},
            {{{"When did Aristotle die?", "Aristotle died in 322 BC."}}, "No."},
            {{{"When was the first laptop released?", "The first laptop was released in 1981."}},
             "Yes."},
            {{{"Who was Aristotle?", "Aristotle was an ancient Greek philosopher."}},
             std::nullopt},
        };
        d.mcr_completion =
            " Aristotle lived from 384 BC to 322 BC. The laptop was invented in 1981.\n"
            "So the answer is: No.";
        d.scr_completion =
            " Aristotle lived from 384 BC to 322 BC, long before laptops existed.\n"
            "So the answer is: No.";
        demos.push_back(std::move(d));
    }
    {
        DemoExample d;
        d.example = {"demo-2",
                     "Can a sloth outrun a cheetah?",
                     {"no"},
                     AnswerKind::binary,
                     std::vector<std::string>{"Yes", "No"},
                     std::nullopt,
                     "strategyqa"};
        d.plans = {
            {{{"How fast is a sloth?", "Sloths move at about 0.24 kilometers per hour."},
              {"How fast is a cheetah?",
               "Cheetahs run at speeds of up to 120 kilometers per hour."}},
             "No."},
            {{{"What is the top speed of a cheetah?",
               "The top speed of a cheetah is about 120 kilometers per hour."},
              {"What is the top speed of a sloth?",
               "The top speed of a sloth is about 0.27 kilometers per hour."}},
             "No."},
            {{{"Are sloths fast animals?", "No, sloths are among the slowest mammals on Earth."}},
             "No."},
            {{{"How fast can a cheetah run?", "A cheetah can run 120 kilometers per hour."}},
             "Unknown."},
            {{{"Do sloths sleep a lot?", "Sloths sleep for up to 20 hours a day."}}, "Yes."},
        };
        d.mcr_completion =
            " Sloths are among the slowest mammals on Earth. Cheetahs run at speeds of up to 120 "
            "kilometers per hour.\n"
            "So the answer is: No.";
        d.scr_completion =
            " Sloths move at about 0.24 kilometers per hour, far slower than a cheetah.\n"
            "So the answer is: No.";
        demos.push_back(std::move(d));
    }
    return demos;
}

const char kDemoCorpus[] = R"({"title": "Aristotle", "text": "Aristotle was an ancient Greek philosopher and polymath. He lived from 384 BC to 322 BC. His writings cover a broad range of subjects."}
{"title": "Laptop", "text": "A laptop is a small portable personal computer. The first commercially successful portable computer was released in 1981. Laptops run on battery power."}
{"title": "Sloth", "text": "Sloths are arboreal mammals noted for their slowness of movement. They move at about 0.24 kilometers per hour. Sloths sleep for many hours a day."}
{"title": "Cheetah", "text": "The cheetah is a large cat native to Africa. It is the fastest land animal, capable of running at 93 to 120 kilometers per hour. Cheetahs hunt by sight."}
)";

int cmd_demo(const std::string& out_dir) {
    fs::path out(out_dir);
    fs::path prompt_dir = out / "prompts" / "demo" / "strategyqa";
    write_file(prompt_dir / "decomposition.txt", kDemoDecomposition);
    write_file(prompt_dir / "meta.txt", kDemoMeta);
    write_file(prompt_dir / "manifest.json", kDemoManifest);
    write_file(out / "data" / "corpus.jsonl", kDemoCorpus);

    auto demos = demo_examples();
    {
        std::vector<Example> examples;
        for (const auto& d : demos) examples.push_back(d.example);
        write_jsonl_file((out / "data" / "dataset.jsonl").string(), examples);
    }

    harness::ExperimentConfig config;
    config.dataset = "strategyqa";
    config.dataset_path = (out / "data" / "dataset.jsonl").string();
    config.strategies = {Strategy::self_ask(), Strategy::sc(5),     Strategy::scr(),
                         Strategy::mcr(),      Strategy::mcr_sc(2), Strategy::oracle()};
    config.k_chains = 5;
    config.runs = 3;
    config.seeds = {11, 11, 11};  // identical runs: the scripted std is exactly 0
    config.prompt_root = (out / "prompts").string();
    config.prompt_set = "demo";
    config.retrieval.backend = EvidenceSource::local_corpus;
    config.retrieval.corpus_path = (out / "data" / "corpus.jsonl").string();
    config.workers = 2;
    config.analysis = true;

    auto retriever = retrieval::make_retriever(config.retrieval);
    backend::ScriptedBackend scripted;

    auto prompt_set =
        prompt_registry::load_prompt_set(config.prompt_root, config.prompt_set, config.dataset);
    auto dec_spec = prompt_set.decomposition_spec();
    auto meta_spec = prompt_set.meta_spec(ContextVariant::qa_pairs);
    chain_generator::ChainGenConfig gen_config;
    gen_config.k_chains = config.k_chains;
    gen_config.retrieval = config.retrieval;

    for (const auto& d : demos) {
        std::uint64_t example_seed = mix64(config.seeds[0] ^ text::fnv1a64(d.example.id));
        auto set0 = scripting::script_chain_set(scripted, *retriever, dec_spec, gen_config,
                                                d.example.question, d.example.id, example_seed,
                                                d.plans, 0);
        auto set1 = scripting::script_chain_set(scripted, *retriever, dec_spec, gen_config,
                                                d.example.question, d.example.id, example_seed,
                                                d.plans, config.k_chains);
        scripting::script_meta(scripted, meta_spec, d.example.question, set0,
                               ContextVariant::qa_pairs, d.mcr_completion);
        scripting::script_meta(scripted, meta_spec, d.example.question, {set0.front()},
                               ContextVariant::qa_pairs, d.scr_completion);
        scripting::script_meta(scripted, meta_spec, d.example.question, set1,
                               ContextVariant::qa_pairs, d.mcr_completion);
    }
    scripted.save_fixtures((out / "fixtures.jsonl").string());

    auto report = harness::run_experiment(config, scripted, *retriever);
    harness::emit_report(report, (out / "report").string());
    std::cout << harness::render_summary_table(json::parse(harness::report_summary_json(report)));
    std::cout << "\nartifacts under " << out_dir << "/ (report/, fixtures.jsonl, data/, prompts/)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-chain reasoning over retrieval-augmented decompositions"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "run an experiment and emit a report");
    std::string run_config, run_out = "out";
    harness::ExperimentConfig overrides;
    std::string strategies_flag, seeds_flag, retriever_flag;
    int sample_size_flag = 0;
    run->add_option("--config", run_config, "experiment config (JSON)");
    run->add_option("--dataset", overrides.dataset, "dataset identifier");
    run->add_option("--data", overrides.dataset_path, "dataset JSONL path");
    run->add_option("--sample-size", sample_size_flag, "seeded subsample size");
    run->add_option("--strategies", strategies_flag,
                    "comma list: self_ask,sc@k,scr,scr_e,mcr,mcr_e,mcr_sc@r,oracle");
    run->add_option("--k", overrides.k_chains, "chains sampled per example");
    run->add_option("--runs", overrides.runs, "repeated runs");
    run->add_option("--seeds", seeds_flag, "comma list of per-run seeds");
    run->add_option("--prompt-root", overrides.prompt_root, "prompt registry root");
    run->add_option("--prompt-set", overrides.prompt_set, "prompt set name");
    run->add_flag("--all-facts-meta", overrides.all_facts_meta,
                  "use the all-facts meta exemplars when the dataset ships them");
    run->add_option("--backend", overrides.backend, "scripted or http");
    run->add_option("--fixtures", overrides.fixtures_path, "scripted completions JSONL");
    run->add_option("--model", overrides.model, "model name for the http backend");
    run->add_option("--cache-dir", overrides.cache_dir, "http response cache directory");
    run->add_option("--retriever", retriever_flag, "fixture, corpus, or web");
    run->add_option("--retrieval-fixtures", overrides.retrieval.fixtures_path,
                    "retrieval fixtures JSONL");
    run->add_option("--corpus", overrides.retrieval.corpus_path, "corpus JSONL file or directory");
    run->add_option("--retrieval-cache", overrides.retrieval.cache_dir,
                    "retrieval cache directory");
    run->add_option("--top-k", overrides.retrieval.top_k, "results per retrieval call");
    run->add_option("--temperature", overrides.sample_temperature, "sampling temperature");
    run->add_option("--max-steps", overrides.max_steps, "decomposition step cap");
    run->add_option("--max-tokens", overrides.max_tokens, "generation budget per call");
    run->add_option("--workers", overrides.workers, "concurrent examples");
    run->add_option("--subsample-seed", overrides.subsample_seed, "subsample seed");
    run->add_flag("--analysis", overrides.analysis, "emit explanation analysis tables");
    run->add_option("--out", run_out, "output directory");

    // score
    auto* score = app.add_subcommand("score", "score a predictions file against a dataset");
    std::string score_predictions, score_data, score_metric, score_abstain, score_out;
    std::uint64_t score_seed = 0;
    score->add_option("--predictions", score_predictions, "predictions JSONL")->required();
    score->add_option("--data", score_data, "dataset JSONL")->required();
    score->add_option("--metric", score_metric, "token_f1, binary_em, or order_of_magnitude");
    score->add_option("--abstain", score_abstain, "half_credit, zero_credit, or random_label");
    score->add_option("--random-seed", score_seed, "seed for the random_label policy");
    score->add_option("--out", score_out, "write rescored rows here");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "explanation similarity and combination report");
    std::string analyze_chains, analyze_predictions, analyze_csv;
    analyze->add_option("--chains", analyze_chains, "chains JSONL from a run")->required();
    analyze->add_option("--predictions", analyze_predictions, "predictions JSONL from a run")
        ->required();
    analyze->add_option("--csv", analyze_csv, "also write per-example rows as CSV");

    // report
    auto* report = app.add_subcommand("report", "render a summary.json as text");
    std::string report_summary;
    report->add_option("--summary", report_summary, "summary.json path")->required();

    // demo
    auto* demo = app.add_subcommand("demo", "self-contained offline demo run");
    std::string demo_out = "demo_out";
    demo->add_option("--out", demo_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            std::vector<std::string> explicit_flags;
            for (const auto* opt : run->get_options()) {
                if (opt->count() > 0 && opt->get_name().size() > 2)
                    explicit_flags.push_back(opt->get_name().substr(2));
            }
            if (run->count("--strategies")) {
                overrides.strategies.clear();
                for (const auto& token : split_list(strategies_flag))
                    overrides.strategies.push_back(parse_strategy(token));
            }
            if (run->count("--seeds")) {
                overrides.seeds.clear();
                for (const auto& token : split_list(seeds_flag))
                    overrides.seeds.push_back(std::stoull(token));
            }
            if (run->count("--retriever"))
                overrides.retrieval.backend = retriever_backend_from(retriever_flag);
            if (run->count("--sample-size")) overrides.sample_size = sample_size_flag;
            return cmd_run(run_config, std::move(overrides), explicit_flags, run_out);
        }
        if (score->parsed())
            return cmd_score(score_predictions, score_data, score_metric, score_abstain,
                             score_seed, score_out);
        if (analyze->parsed()) return cmd_analyze(analyze_chains, analyze_predictions, analyze_csv);
        if (report->parsed()) return cmd_report(report_summary);
        if (demo->parsed()) return cmd_demo(demo_out);
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
