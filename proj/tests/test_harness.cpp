#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "metachain/harness.hpp"
#include "metachain/prompt_registry.hpp"
#include "metachain/scripting.hpp"
#include "metachain/text.hpp"

namespace fs = std::filesystem;
using namespace metachain;

namespace {

constexpr double kTol = 1e-12;

fs::path fresh_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    fs::path dir = fs::temp_directory_path() /
                   ("metachain_harness_" + tag + "_" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

/// Retriever that never finds anything, for runs whose prompts must stay
/// evidence-free.
class NullRetriever : public retrieval::Retriever {
  public:
    explicit NullRetriever(retrieval::RetrievalConfig config) : config_(std::move(config)) {}

    std::vector<Evidence> retrieve(const std::string&) override { return {}; }
    const retrieval::RetrievalConfig& config() const override { return config_; }

  private:
    retrieval::RetrievalConfig config_;
};

const char* kDecompositionPrompt =
    "Answer the question by decomposing it into follow up questions.\n"
    "#\n"
    "Question: Is a bee an insect?\n"
    "Are follow up questions needed here: Yes.\n"
    "Follow up: How many legs does a bee have?\n"
    "Intermediate answer: A bee has six legs.\n"
    "So the final answer is: Yes.\n";

const char* kMetaPrompt =
    "Read the context and answer the question.\n"
    "#\n"
    "Context:\n"
    "How many legs does a bee have? A bee has six legs.\n"
    "Question:\n"
    "Is a bee an insect?\n"
    "Answer: Insects have six legs. So the answer is: Yes.\n"
    "#\n"
    "Context:\n"
    "Where do penguins live? Penguins live in the southern hemisphere.\n"
    "Question:\n"
    "Do penguins live in the Arctic?\n"
    "Answer: Penguins live in the south, not the Arctic. So the answer is: No.\n";

const char* kManifest = R"({
  "dataset": "minibin",
  "decomposition": {"file": "decomposition.txt", "exemplars": 1},
  "meta": {"file": "meta.txt", "exemplars": 2, "balanced_labels": ["Yes", "No"]}
})";

const char* kQuestion1 = "Did the painter ever visit Rome?";
const char* kQuestion2 = "Is the metal heavier than water?";

/// A fully scripted two-example binary experiment. The first example's
/// greedy chain answers wrongly so the strategies separate: self_ask lands
/// at 0.5 while voting and the meta-reasoner reach 1.0. The second example's
/// meta explanation splices a fact from each chain, which the combination
/// detector must flag.
struct MiniWorld {
    fs::path root;
    harness::ExperimentConfig config;
    std::unique_ptr<backend::ScriptedBackend> backend;
    std::unique_ptr<NullRetriever> retriever;
    std::vector<ReasoningChain> chains_m1;
    std::vector<ReasoningChain> chains_m2;
};

MiniWorld make_mini_world(const std::string& tag) {
    MiniWorld world;
    world.root = fresh_dir(tag);

    fs::path prompt_dir = world.root / "prompts" / "default" / "minibin";
    write_file(prompt_dir / "manifest.json", kManifest);
    write_file(prompt_dir / "decomposition.txt", kDecompositionPrompt);
    write_file(prompt_dir / "meta.txt", kMetaPrompt);

    write_file(world.root / "minibin.jsonl",
               std::string() +
                   R"({"id": "m1", "question": "Did the painter ever visit Rome?", )" +
                   R"("gold_answers": ["no"], "answer_kind": "binary", "choices": ["Yes", "No"]})" +
                   "\n" +
                   R"({"id": "m2", "question": "Is the metal heavier than water?", )" +
                   R"("gold_answers": ["yes"], "answer_kind": "binary", "choices": ["Yes", "No"]})" +
                   "\n");

    auto& cfg = world.config;
    cfg.dataset = "minibin";
    cfg.dataset_path = (world.root / "minibin.jsonl").string();
    cfg.prompt_root = (world.root / "prompts").string();
    cfg.prompt_set = "default";
    for (const char* token : {"self_ask", "sc@3", "scr", "mcr", "oracle"})
        cfg.strategies.push_back(parse_strategy(token));
    cfg.k_chains = 3;
    cfg.runs = 2;
    cfg.seeds = {5, 5};
    cfg.workers = 2;
    cfg.analysis = true;
    cfg.retrieval.retrieve_for_original_question = false;

    world.backend = std::make_unique<backend::ScriptedBackend>();
    world.retriever = std::make_unique<NullRetriever>(cfg.retrieval);

    auto prompts = prompt_registry::load_prompt_set(cfg.prompt_root, "default", "minibin");
    auto decomposition = prompts.decomposition_spec();
    auto meta = prompts.meta_spec(ContextVariant::qa_pairs);
    meta.max_tokens = cfg.max_tokens;

    chain_generator::ChainGenConfig gen;
    gen.k_chains = cfg.k_chains;
    gen.sample_temperature = cfg.sample_temperature;
    gen.max_steps = cfg.max_steps;
    gen.max_tokens = cfg.max_tokens;
    gen.retrieval = cfg.retrieval;

    // Both runs reuse seed 5, so one set of fixtures serves them both.
    std::uint64_t seed_m1 = mix64(5 ^ text::fnv1a64("m1"));
    std::uint64_t seed_m2 = mix64(5 ^ text::fnv1a64("m2"));

    std::vector<scripting::PlannedChain> plans_m1 = {
        {{{"Did he travel to Italy?", "He never left Flanders."}}, "Yes."},
        {{{"Where did the painter live?", "He lived in Bruges all his life."}}, "No."},
        {{}, "No."},
    };
    world.chains_m1 = scripting::script_chain_set(*world.backend, *world.retriever, decomposition,
                                                  gen, kQuestion1, "m1", seed_m1, plans_m1);
    scripting::script_meta(*world.backend, meta, kQuestion1, {world.chains_m1[0]},
                           ContextVariant::qa_pairs,
                           " He never left Flanders, so he never visited Rome."
                           " So the answer is: No.");
    scripting::script_meta(*world.backend, meta, kQuestion1, world.chains_m1,
                           ContextVariant::qa_pairs,
                           " The painter lived in Bruges and never left Flanders."
                           " So the answer is: No.");

    std::vector<scripting::PlannedChain> plans_m2 = {
        {{{"What is the metal's density?", "Its density is 11.3 g/cm3."}}, "Yes."},
        {{{"How dense is water?", "Water is about one gram per millilitre."}}, "Yes."},
        {{}, std::nullopt},
    };
    world.chains_m2 = scripting::script_chain_set(*world.backend, *world.retriever, decomposition,
                                                  gen, kQuestion2, "m2", seed_m2, plans_m2);
    scripting::script_meta(*world.backend, meta, kQuestion2, {world.chains_m2[0]},
                           ContextVariant::qa_pairs,
                           " Its density is 11.3 g/cm3, far above water."
                           " So the answer is: Yes.");
    scripting::script_meta(*world.backend, meta, kQuestion2, world.chains_m2,
                           ContextVariant::qa_pairs,
                           " Its density is 11.3 g/cm3. Water is about one gram per millilitre."
                           " So the answer is: Yes.");

    return world;
}

harness::ExperimentConfig valid_config() {
    harness::ExperimentConfig cfg;
    cfg.dataset = "minibin";
    cfg.dataset_path = "unused.jsonl";
    cfg.strategies = {parse_strategy("self_ask"), parse_strategy("mcr"), parse_strategy("scr")};
    cfg.k_chains = 3;
    cfg.runs = 2;
    return cfg;
}

const harness::PredictionRow& row_for(const harness::RunReport& report, int run,
                                      const std::string& example_id, const std::string& token) {
    for (const auto& row : report.rows) {
        if (row.run == run && row.example_id == example_id &&
            strategy_token(row.strategy) == token)
            return row;
    }
    REQUIRE_MESSAGE(false, "no row for run " << run << " " << example_id << " " << token);
    throw std::logic_error("unreachable");
}

}  // namespace

TEST_CASE("experiment config round trips through json") {
    harness::ExperimentConfig cfg;
    cfg.dataset = "quartz";
    cfg.dataset_path = "data/samples/quartz.jsonl";
    cfg.sample_size = 7;
    for (const char* token : {"self_ask", "sc@5", "scr_e", "mcr", "mcr_sc@2", "oracle"})
        cfg.strategies.push_back(parse_strategy(token));
    cfg.k_chains = 5;
    cfg.runs = 3;
    cfg.seeds = {11, 12, 13};
    cfg.prompt_set = "alt";
    cfg.all_facts_meta = true;
    cfg.backend = "http";
    cfg.model = "test-model";
    cfg.cache_dir = "/tmp/cache";
    cfg.retrieval.backend = EvidenceSource::local_corpus;
    cfg.retrieval.corpus_path = "corpus.jsonl";
    cfg.metric = evaluation::MetricConfig{evaluation::MetricKind::binary_em,
                                          evaluation::AbstainPolicy::random_label, 99};
    cfg.workers = 2;
    cfg.analysis = true;

    json j = cfg;
    auto back = j.get<harness::ExperimentConfig>();
    CHECK(json(back) == j);

    std::vector<std::string> tokens;
    for (const auto& s : back.strategies) tokens.push_back(strategy_token(s));
    CHECK(tokens == std::vector<std::string>{"self_ask", "sc@5", "scr_e", "mcr", "mcr_sc@2",
                                             "oracle"});
    CHECK(back.sample_size == 7);
    CHECK(back.metric->random_label_seed == 99);
}

TEST_CASE("validate fills seed defaults and truncates extras") {
    auto cfg = valid_config();
    cfg.runs = 3;
    harness::validate(cfg);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});

    auto truncated = valid_config();
    truncated.runs = 2;
    truncated.seeds = {7, 8, 9};
    harness::validate(truncated);
    CHECK(truncated.seeds == std::vector<std::uint64_t>{7, 8});

    auto short_seeds = valid_config();
    short_seeds.runs = 2;
    short_seeds.seeds = {7};
    CHECK_THROWS_AS(harness::validate(short_seeds), ConfigError);
}

TEST_CASE("validate rejects structurally broken configs") {
    auto check_throws = [](auto mutate) {
        auto cfg = valid_config();
        mutate(cfg);
        CHECK_THROWS_AS(harness::validate(cfg), ConfigError);
    };
    check_throws([](auto& c) { c.dataset.clear(); });
    check_throws([](auto& c) { c.strategies.clear(); });
    check_throws([](auto& c) { c.k_chains = 0; });
    check_throws([](auto& c) { c.runs = 0; });
    check_throws([](auto& c) { c.workers = 0; });
    check_throws([](auto& c) { c.sample_size = 0; });
    check_throws([](auto& c) { c.backend = "grpc"; });

    // sc@k must fit within the sampled chain budget.
    auto oversubscribed = valid_config();
    oversubscribed.strategies.push_back(parse_strategy("sc@5"));
    oversubscribed.k_chains = 3;
    CHECK_THROWS_WITH_AS(harness::validate(oversubscribed),
                         doctest::Contains("sc@5"), ConfigError);

    // The analysis tables compare mcr against scr, so both must run.
    auto analysis_only_mcr = valid_config();
    analysis_only_mcr.analysis = true;
    analysis_only_mcr.strategies = {parse_strategy("mcr")};
    CHECK_THROWS_AS(harness::validate(analysis_only_mcr), ConfigError);
    auto analysis_both = valid_config();
    analysis_both.analysis = true;
    CHECK_NOTHROW(harness::validate(analysis_both));
}

TEST_CASE("load_dataset reports malformed rows by line number") {
    fs::path dir = fresh_dir("dataset_errors");
    auto load = [&](const std::string& content) {
        fs::path path = dir / "data.jsonl";
        write_file(path, content);
        auto cfg = valid_config();
        return harness::load_dataset(path.string(), cfg);
    };
    auto error_of = [&](const std::string& content) -> std::string {
        try {
            load(content);
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };

    const std::string good =
        R"({"id": "a", "question": "Q?", "gold_answers": ["x"], "answer_kind": "open"})";

    CHECK(error_of("not json\n").find(":1:") != std::string::npos);
    // Blank lines advance the line counter but are otherwise skipped.
    CHECK(error_of("\n" + good + "\n{broken\n").find(":3:") != std::string::npos);
    CHECK(error_of(R"({"id": "", "question": "Q?", "gold_answers": ["x"], "answer_kind": "open"})")
              .find("missing id") != std::string::npos);
    CHECK(error_of(R"({"id": "a", "question": "", "gold_answers": ["x"], "answer_kind": "open"})")
              .find("missing question") != std::string::npos);
    CHECK(error_of(R"({"id": "a", "question": "Q?", "gold_answers": [], "answer_kind": "open"})")
              .find("missing gold_answers") != std::string::npos);
    // A row without one of the required fields surfaces the json error, still
    // tagged with the line.
    CHECK(error_of(R"({"id": "a", "gold_answers": ["x"], "answer_kind": "open"})")
              .find(":1:") != std::string::npos);

    std::string dup_msg = error_of(good + "\n" +
                                   R"({"id": "b", "question": "Q?", "gold_answers": ["x"], )" +
                                   R"("answer_kind": "open"})" + "\n" + good + "\n");
    CHECK(dup_msg.find("duplicate id \"a\"") != std::string::npos);
    CHECK(dup_msg.find("first at line 1") != std::string::npos);

    CHECK(error_of("\n\n").find("dataset is empty") != std::string::npos);
    CHECK_THROWS_AS(
        {
            auto cfg = valid_config();
            harness::load_dataset((dir / "nope.jsonl").string(), cfg);
        },
        ConfigError);
}

TEST_CASE("load_dataset applies dataset conventions") {
    fs::path dir = fresh_dir("dataset_defaults");

    SUBCASE("numeric-only datasets append units and skip question retrieval") {
        fs::path path = dir / "fermi.jsonl";
        write_file(path,
                   R"({"id": "f1", "question": "How many?", "gold_answers": ["100"], )"
                   R"("answer_kind": "numeric", "units": "blinks"})"
                   "\n"
                   R"({"id": "f2", "question": "How far?", "gold_answers": ["3"], )"
                   R"("answer_kind": "numeric"})"
                   "\n");
        auto cfg = valid_config();
        cfg.dataset = "fermi";
        auto examples = harness::load_dataset(path.string(), cfg);
        REQUIRE(examples.size() == 2);
        CHECK(examples[0].question == "How many? (answer in blinks)");
        CHECK(examples[1].question == "How far?");  // no units, nothing to append
        CHECK_FALSE(cfg.retrieval.retrieve_for_original_question);
        REQUIRE(cfg.metric.has_value());
        CHECK(cfg.metric->kind == evaluation::MetricKind::order_of_magnitude);
        CHECK(cfg.metric->abstain_policy == evaluation::AbstainPolicy::zero_credit);
        CHECK(examples[0].dataset == "fermi");  // backfilled from the config
    }

    SUBCASE("mixed datasets are left alone and a preset metric wins") {
        fs::path path = dir / "mixed.jsonl";
        write_file(path,
                   R"({"id": "n1", "question": "How many?", "gold_answers": ["9"], )"
                   R"("answer_kind": "numeric", "units": "cats", "dataset": "other"})"
                   "\n"
                   R"({"id": "b1", "question": "Is it?", "gold_answers": ["yes"], )"
                   R"("answer_kind": "binary"})"
                   "\n");
        auto cfg = valid_config();
        cfg.metric = evaluation::MetricConfig{evaluation::MetricKind::token_f1,
                                              evaluation::AbstainPolicy::half_credit, 0};
        auto examples = harness::load_dataset(path.string(), cfg);
        CHECK(examples[0].question == "How many?");  // mixed kinds, no unit suffix
        CHECK(cfg.retrieval.retrieve_for_original_question);
        CHECK(cfg.metric->kind == evaluation::MetricKind::token_f1);
        CHECK(examples[0].dataset == "other");  // explicit value kept
    }
}

TEST_CASE("load_dataset draws a seeded subsample in dataset order") {
    fs::path dir = fresh_dir("dataset_subsample");
    std::string content;
    for (int i = 0; i < 10; ++i) {
        content += R"({"id": "ex)" + std::to_string(i) + R"(", "question": "Q?", )" +
                   R"("gold_answers": ["x"], "answer_kind": "open"})" + "\n";
    }
    fs::path path = dir / "big.jsonl";
    write_file(path, content);

    auto sample_ids = [&](int n, std::uint64_t seed) {
        auto cfg = valid_config();
        cfg.sample_size = n;
        cfg.subsample_seed = seed;
        std::vector<std::string> ids;
        for (const auto& ex : harness::load_dataset(path.string(), cfg)) ids.push_back(ex.id);
        return ids;
    };

    auto first = sample_ids(4, 2023);
    REQUIRE(first.size() == 4);
    CHECK(first == sample_ids(4, 2023));  // same seed, same draw

    // Indices are re-sorted after the draw, so dataset order is preserved.
    auto full = sample_ids(10, 2023);
    auto pos = [&](const std::string& id) {
        return std::find(full.begin(), full.end(), id) - full.begin();
    };
    for (std::size_t i = 1; i < first.size(); ++i) CHECK(pos(first[i - 1]) < pos(first[i]));

    CHECK(sample_ids(10, 2023).size() == 10);
    CHECK(sample_ids(12, 2023).size() == 10);  // oversized request takes the whole set
}

TEST_CASE("scripted experiment produces per-strategy aggregates and analysis") {
    MiniWorld world = make_mini_world("e2e");
    auto report = harness::run_experiment(world.config, *world.backend, *world.retriever);

    CHECK(report.example_count == 2);
    CHECK(report.config.seeds == std::vector<std::uint64_t>{5, 5});
    REQUIRE(report.config.metric.has_value());
    CHECK(report.config.metric->kind == evaluation::MetricKind::binary_em);
    CHECK(report.config.metric->abstain_policy == evaluation::AbstainPolicy::half_credit);

    // The greedy chain is wrong on m1, so self_ask trails every aggregate
    // strategy; identical seeds make the spread exactly zero.
    REQUIRE(report.results.size() == 5);
    std::map<std::string, double> means;
    for (const auto& result : report.results) {
        means[strategy_token(result.strategy)] = result.aggregate.mean;
        CHECK(result.aggregate.std_dev == 0.0);
        REQUIRE(result.aggregate.run_means.size() == 2);
        CHECK(result.aggregate.run_means[0] == result.aggregate.run_means[1]);
    }
    CHECK(means.at("self_ask") == doctest::Approx(0.5).epsilon(kTol));
    CHECK(means.at("sc@3") == doctest::Approx(1.0).epsilon(kTol));
    CHECK(means.at("scr") == doctest::Approx(1.0).epsilon(kTol));
    CHECK(means.at("mcr") == doctest::Approx(1.0).epsilon(kTol));
    CHECK(means.at("oracle") == doctest::Approx(1.0).epsilon(kTol));

    // Rows come out run by run, then example, then strategy in config order.
    REQUIRE(report.rows.size() == 2 * 2 * 5);
    std::size_t r = 0;
    for (int run = 0; run < 2; ++run) {
        for (const char* id : {"m1", "m2"}) {
            for (const char* token : {"self_ask", "sc@3", "scr", "mcr", "oracle"}) {
                CAPTURE(run);
                CAPTURE(id);
                CAPTURE(token);
                CHECK(report.rows[r].run == run);
                CHECK(report.rows[r].example_id == id);
                CHECK(strategy_token(report.rows[r].strategy) == token);
                CHECK_FALSE(report.rows[r].failed);
                ++r;
            }
        }
    }

    CHECK(row_for(report, 0, "m1", "self_ask").answer == "Yes");
    CHECK(row_for(report, 0, "m1", "self_ask").score == 0.0);
    CHECK(row_for(report, 0, "m1", "sc@3").answer == "No");
    const auto& scr_m1 = row_for(report, 0, "m1", "scr");
    CHECK(scr_m1.answer == "No");
    CHECK(scr_m1.explanation == "He never left Flanders, so he never visited Rome.");
    CHECK(scr_m1.chains_used.size() == 1);
    const auto& mcr_m1 = row_for(report, 0, "m1", "mcr");
    CHECK(mcr_m1.explanation == "The painter lived in Bruges and never left Flanders.");
    CHECK(mcr_m1.chains_used.size() == 3);
    const auto& oracle_m1 = row_for(report, 0, "m1", "oracle");
    REQUIRE(oracle_m1.chains_used.size() == 1);
    CHECK(oracle_m1.chains_used[0].index == 1);  // the first correct chain

    // First-run chain sets are kept verbatim for the analyze subcommand.
    REQUIRE(report.chain_sets.size() == 2);
    CHECK(report.chain_sets[0].example_id == "m1");
    CHECK(json(report.chain_sets[0].chains) == json(world.chains_m1));
    CHECK(json(report.chain_sets[1].chains) == json(world.chains_m2));

    // Six chains per run, pooled across both runs; the stalled chain and the
    // one-step chains average to two thirds of a step.
    CHECK(report.token_stats.decomposition_steps.count == 12);
    CHECK(report.token_stats.decomposition_steps.mean == doctest::Approx(2.0 / 3.0).epsilon(kTol));
    CHECK(report.token_stats.output_tokens.count == 12);
    CHECK(report.token_stats.retrieval_tokens.count == 12);
    CHECK(report.token_stats.retrieval_tokens.mean == 0.0);  // nothing retrieved
    CHECK(report.token_stats.meta_prompt_tokens.count == 4);
    CHECK(report.token_stats.meta_prompt_tokens.mean > 0.0);

    // m1's explanation reuses a third of the greedy chain's tokens (Medium,
    // no combination); m2's splices facts from two chains.
    REQUIRE(report.analysis.has_value());
    REQUIRE(report.analysis->rows.size() == 2);
    CHECK(report.analysis->rows[0].example_id == "m1");
    CHECK(report.analysis->rows[0].bin == analysis::SimilarityBin::Medium);
    CHECK_FALSE(report.analysis->rows[0].combination);
    CHECK(report.analysis->rows[1].example_id == "m2");
    CHECK(report.analysis->rows[1].bin == analysis::SimilarityBin::Medium);
    CHECK(report.analysis->rows[1].combination);

    REQUIRE(report.analysis->similarity.size() == 4);
    const auto& medium = report.analysis->similarity[2];
    CHECK(medium.bin == analysis::SimilarityBin::Medium);
    CHECK(medium.count == 2);
    CHECK(medium.mcr_mean == doctest::Approx(1.0).epsilon(kTol));
    CHECK(medium.scr_mean == doctest::Approx(1.0).epsilon(kTol));

    json summary = json::parse(harness::report_summary_json(report));
    CHECK(summary.at("analysis").at("combination_count") == 1);
    CHECK(summary.at("strategies").size() == 5);
}

TEST_CASE("identical scripted runs serialize to identical summaries") {
    MiniWorld first = make_mini_world("det_a");
    MiniWorld second = make_mini_world("det_b");
    auto report_a = harness::run_experiment(first.config, *first.backend, *first.retriever);
    auto report_b = harness::run_experiment(second.config, *second.backend, *second.retriever);
    CHECK(harness::report_summary_json(report_a) == harness::report_summary_json(report_b));
}

TEST_CASE("emit_report writes round-trippable artifacts") {
    MiniWorld world = make_mini_world("emit");
    auto report = harness::run_experiment(world.config, *world.backend, *world.retriever);

    fs::path out_dir = fresh_dir("report_out") / "report";
    harness::emit_report(report, out_dir.string());

    CHECK(read_file(out_dir / "summary.json") == harness::report_summary_json(report));

    auto prediction_lines = read_lines(out_dir / "predictions.jsonl");
    REQUIRE(prediction_lines.size() == report.rows.size());
    std::vector<harness::PredictionRow> rows;
    for (std::size_t i = 0; i < prediction_lines.size(); ++i) {
        auto row = json::parse(prediction_lines[i]).get<harness::PredictionRow>();
        CHECK(json(row) == json(report.rows[i]));
        rows.push_back(std::move(row));
    }

    auto chain_lines = read_lines(out_dir / "chains.jsonl");
    REQUIRE(chain_lines.size() == 2);
    for (std::size_t i = 0; i < chain_lines.size(); ++i) {
        auto record = json::parse(chain_lines[i]).get<harness::ChainSetRecord>();
        CHECK(json(record) == json(report.chain_sets[i]));
    }

    auto csv = read_lines(out_dir / "per_example.csv");
    REQUIRE(csv.size() == 1 + report.rows.size());
    CHECK(csv[0] == "run,example_id,strategy,score,abstained,parse_warning,failed,answer,chains");
    CHECK(csv[1].find("0,m1,self_ask,0.000000") == 0);

    auto analysis_csv = read_lines(out_dir / "analysis.csv");
    REQUIRE(analysis_csv.size() == 3);
    CHECK(analysis_csv[0] == "example_id,bin,combination");
    CHECK(analysis_csv[1] == "m1,Medium,0");
    CHECK(analysis_csv[2] == "m2,Medium,1");

    // The score subcommand's path: re-score the emitted predictions against
    // the dataset and land on the same aggregates.
    auto cfg_copy = report.config;
    auto examples = harness::load_dataset(report.config.dataset_path, cfg_copy);
    for (auto& row : rows) row.score = -1.0;  // make sure scoring is recomputed
    auto rescored = harness::score_rows(rows, examples, *report.config.metric);
    REQUIRE(rescored.size() == report.results.size());
    for (std::size_t i = 0; i < rescored.size(); ++i) {
        CHECK(strategy_token(rescored[i].strategy) ==
              strategy_token(report.results[i].strategy));
        CHECK(rescored[i].aggregate.mean ==
              doctest::Approx(report.results[i].aggregate.mean).epsilon(kTol));
        CHECK(rescored[i].aggregate.std_dev ==
              doctest::Approx(report.results[i].aggregate.std_dev).epsilon(kTol));
    }

    auto stray = rows;
    stray[0].example_id = "ghost";
    CHECK_THROWS_WITH_AS(harness::score_rows(stray, examples, *report.config.metric),
                         doctest::Contains("ghost"), ConfigError);

    std::string table = harness::render_summary_table(json::parse(read_file(out_dir /
                                                                            "summary.json")));
    for (const char* token : {"self_ask", "sc@3", "scr", "mcr", "oracle"})
        CHECK(table.find(token) != std::string::npos);
    CHECK(table.find("combinations detected: 1") != std::string::npos);
}

namespace {

/// Delegates to the scripted backend except for meta prompts, which fail
/// like a dead transport. Meta prompts are the only ones ending with the
/// bare answer cue.
class FailingMetaBackend : public backend::Backend {
  public:
    explicit FailingMetaBackend(backend::Backend& inner) : inner_(inner) {}

    std::string generate(const backend::GenerationRequest& request) override {
        const std::string cue = "\nAnswer:";
        if (request.prompt.size() >= cue.size() &&
            request.prompt.compare(request.prompt.size() - cue.size(), cue.size(), cue) == 0) {
            throw TransportError("injected meta outage");
        }
        return inner_.generate(request);
    }

    const backend::BackendProfile& profile() const override { return inner_.profile(); }

  private:
    backend::Backend& inner_;
};

}  // namespace

TEST_CASE("transport failures fail the row and score as abstentions") {
    MiniWorld world = make_mini_world("failures");
    world.config.strategies = {parse_strategy("self_ask"), parse_strategy("mcr")};
    world.config.analysis = false;
    world.config.runs = 1;
    world.config.seeds = {5};

    FailingMetaBackend flaky(*world.backend);
    auto report = harness::run_experiment(world.config, flaky, *world.retriever);

    REQUIRE(report.rows.size() == 4);
    const auto& mcr_m1 = row_for(report, 0, "m1", "mcr");
    CHECK(mcr_m1.failed);
    CHECK(mcr_m1.abstained);
    CHECK_FALSE(mcr_m1.answer.has_value());
    CHECK_FALSE(mcr_m1.explanation.has_value());
    CHECK(mcr_m1.chains_used.empty());
    CHECK(mcr_m1.score == 0.5);  // binary metric, half credit for abstaining

    // Chain sampling still succeeded, so self_ask is untouched.
    const auto& self_m1 = row_for(report, 0, "m1", "self_ask");
    CHECK_FALSE(self_m1.failed);
    CHECK(self_m1.answer == "Yes");

    for (const auto& result : report.results) {
        if (strategy_token(result.strategy) == "mcr")
            CHECK(result.aggregate.mean == doctest::Approx(0.5).epsilon(kTol));
    }
}
