#include "metachain/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "httplib.h"
#include "metachain/sha256.hpp"
#include "metachain/text.hpp"

namespace metachain::retrieval {

namespace fs = std::filesystem;

void to_json(json& j, const RetrievalConfig& v) {
    j = json{{"backend", evidence_source_name(v.backend)},
             {"domain_prefix", v.domain_prefix},
             {"top_k", v.top_k},
             {"retrieve_for_original_question", v.retrieve_for_original_question},
             {"snippet_token_cap", v.snippet_token_cap}};
    if (!v.fixtures_path.empty()) j["fixtures_path"] = v.fixtures_path;
    if (!v.corpus_path.empty()) j["corpus_path"] = v.corpus_path;
    if (!v.cache_dir.empty()) j["cache_dir"] = v.cache_dir;
}

void from_json(const json& j, RetrievalConfig& v) {
    v = RetrievalConfig{};
    if (j.contains("backend")) v.backend = evidence_source_from_name(j.at("backend").get<std::string>());
    v.domain_prefix = j.value("domain_prefix", v.domain_prefix);
    v.top_k = j.value("top_k", v.top_k);
    v.retrieve_for_original_question =
        j.value("retrieve_for_original_question", v.retrieve_for_original_question);
    v.snippet_token_cap = j.value("snippet_token_cap", v.snippet_token_cap);
    v.fixtures_path = j.value("fixtures_path", std::string{});
    v.corpus_path = j.value("corpus_path", std::string{});
    v.cache_dir = j.value("cache_dir", std::string{});
    if (v.top_k < 1) throw ConfigError("retrieval top_k must be >= 1");
}

std::optional<Evidence> Retriever::retrieve_for_chain_start(const std::string& question) {
    if (!config().retrieve_for_original_question) return std::nullopt;
    auto results = retrieve(question);
    if (results.empty()) return std::nullopt;
    return results.front();
}

Evidence cap_rendered_evidence(Evidence evidence, int cap) {
    int title_tokens = static_cast<int>(text::whitespace_tokens(evidence.title + ":").size());
    int rendered_tokens =
        title_tokens + static_cast<int>(text::whitespace_tokens(evidence.snippet).size());
    if (rendered_tokens > cap) {
        int budget = std::max(0, cap - title_tokens);
        evidence.snippet = text::truncate_whitespace_tokens(evidence.snippet, budget);
    }
    return evidence;
}

namespace {

struct FixtureRow {
    std::string query;
    std::string title;
    std::string snippet;
};

void from_json(const json& j, FixtureRow& v) {
    j.at("query").get_to(v.query);
    j.at("title").get_to(v.title);
    j.at("snippet").get_to(v.snippet);
}

std::vector<std::string> query_terms(const std::string& query) {
    auto tokens = text::whitespace_tokens(text::strip_punctuation(text::to_lower(query)));
    std::set<std::string> unique(tokens.begin(), tokens.end());
    return {unique.begin(), unique.end()};
}

}  // namespace

FixtureRetriever::FixtureRetriever(RetrievalConfig config) : config_(std::move(config)) {
    if (config_.fixtures_path.empty()) {
        throw ConfigError("fixture retriever needs fixtures_path");
    }
    auto rows = read_jsonl_file<FixtureRow>(config_.fixtures_path);
    for (auto& row : rows) {
        auto& list = by_query_[row.query];
        Evidence e{row.title, row.snippet, EvidenceSource::fixture, static_cast<int>(list.size()) + 1};
        list.push_back(cap_rendered_evidence(std::move(e), config_.snippet_token_cap));
    }
}

std::vector<Evidence> FixtureRetriever::retrieve(const std::string& query) {
    auto it = by_query_.find(query);
    if (it == by_query_.end()) return {};
    auto results = it->second;
    if (static_cast<int>(results.size()) > config_.top_k) results.resize(config_.top_k);
    return results;
}

CorpusRetriever::CorpusRetriever(RetrievalConfig config) : config_(std::move(config)) {
    if (config_.corpus_path.empty()) throw ConfigError("corpus retriever needs corpus_path");

    struct Doc {
        std::string title;
        std::string text;
    };
    struct DocReader {
        static void read(const std::string& path, std::vector<Doc>& docs) {
            std::ifstream in(path);
            if (!in) throw ConfigError("cannot open corpus file " + path);
            std::string line;
            std::size_t line_no = 0;
            while (std::getline(in, line)) {
                ++line_no;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                try {
                    json j = json::parse(line);
                    docs.push_back({j.at("title").get<std::string>(), j.at("text").get<std::string>()});
                } catch (const std::exception& e) {
                    throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
                }
            }
        }
    };

    std::vector<Doc> docs;
    if (fs::is_directory(config_.corpus_path)) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(config_.corpus_path)) {
            if (entry.path().extension() == ".jsonl") files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) DocReader::read(f, docs);
    } else {
        DocReader::read(config_.corpus_path, docs);
    }
    if (docs.empty()) throw ConfigError("corpus at " + config_.corpus_path + " is empty");

    // 3-sentence sliding windows; short documents become a single passage.
    constexpr int kWindow = 3;
    long total_length = 0;
    for (int d = 0; d < static_cast<int>(docs.size()); ++d) {
        doc_titles_.push_back(docs[d].title);
        auto sentences = text::split_sentences(docs[d].text);
        int n = static_cast<int>(sentences.size());
        if (n == 0) continue;
        int last_start = std::max(0, n - kWindow);
        for (int i = 0; i <= last_start; ++i) {
            Passage p;
            p.doc = d;
            p.index = i;
            for (int s = i; s < std::min(n, i + kWindow); ++s) {
                if (!p.text.empty()) p.text.push_back(' ');
                p.text += sentences[s];
            }
            for (const auto& term :
                 text::whitespace_tokens(text::strip_punctuation(text::to_lower(p.text)))) {
                ++p.term_counts[term];
                ++p.length;
            }
            total_length += p.length;
            passages_.push_back(std::move(p));
        }
    }
    if (passages_.empty()) throw ConfigError("corpus at " + config_.corpus_path + " has no text");
    avg_passage_length_ = double(total_length) / double(passages_.size());

    for (const auto& p : passages_) {
        for (const auto& [term, count] : p.term_counts) ++document_frequency_[term];
    }
}

std::vector<Evidence> CorpusRetriever::retrieve(const std::string& query) {
    // BM25 with the +1-smoothed IDF so scores stay positive on tiny corpora.
    constexpr double k1 = 1.2;
    constexpr double b = 0.75;
    const double n_passages = double(passages_.size());

    auto terms = query_terms(query);
    struct Hit {
        double score;
        int passage;
    };
    std::vector<Hit> hits;
    for (int pi = 0; pi < static_cast<int>(passages_.size()); ++pi) {
        const Passage& p = passages_[pi];
        double score = 0.0;
        for (const auto& term : terms) {
            auto tf_it = p.term_counts.find(term);
            if (tf_it == p.term_counts.end()) continue;
            double df = double(document_frequency_.at(term));
            double idf = std::log(1.0 + (n_passages - df + 0.5) / (df + 0.5));
            double tf = double(tf_it->second);
            double norm = k1 * (1.0 - b + b * double(p.length) / avg_passage_length_);
            score += idf * tf * (k1 + 1.0) / (tf + norm);
        }
        if (score > 0.0) hits.push_back({score, pi});
    }

    std::sort(hits.begin(), hits.end(), [this](const Hit& x, const Hit& y) {
        if (x.score != y.score) return x.score > y.score;
        const Passage& px = passages_[x.passage];
        const Passage& py = passages_[y.passage];
        if (px.doc != py.doc) return px.doc < py.doc;
        return px.index < py.index;
    });

    std::vector<Evidence> results;
    for (const Hit& hit : hits) {
        if (static_cast<int>(results.size()) >= config_.top_k) break;
        const Passage& p = passages_[hit.passage];
        Evidence e{doc_titles_[p.doc], p.text, EvidenceSource::local_corpus,
                   static_cast<int>(results.size()) + 1};
        results.push_back(cap_rendered_evidence(std::move(e), config_.snippet_token_cap));
    }
    return results;
}

struct WebSearchRetriever::Impl {
    explicit Impl(const WebSearchOptions& options) : client(options.base_url) {
        client.set_connection_timeout(options.timeout_seconds);
        client.set_read_timeout(options.timeout_seconds);
    }
    httplib::Client client;
};

WebSearchRetriever::WebSearchRetriever(RetrievalConfig config, WebSearchOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
    if (options_.base_url.empty()) {
        if (const char* v = std::getenv("METACHAIN_SEARCH_URL"); v && *v) options_.base_url = v;
    }
    if (options_.base_url.empty()) options_.base_url = "https://serpapi.com";
    if (options_.api_key.empty()) {
        if (const char* v = std::getenv("METACHAIN_SEARCH_API_KEY"); v && *v) options_.api_key = v;
        else if (const char* w = std::getenv("SERPAPI_API_KEY"); w && *w) options_.api_key = w;
    }
    impl_ = std::make_unique<Impl>(options_);
}

WebSearchRetriever::~WebSearchRetriever() = default;

std::vector<Evidence> WebSearchRetriever::retrieve(const std::string& query) {
    httplib::Params params{{"engine", "google"},
                           {"q", config_.domain_prefix + " " + query},
                           {"num", std::to_string(config_.top_k)}};
    if (!options_.api_key.empty()) params.emplace("api_key", options_.api_key);
    const std::string path = httplib::append_query_params("/search", params);

    std::string last_error;
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(options_.initial_backoff_ms) * (1 << (attempt - 1)));
        }
        auto res = impl_->client.Get(path);
        if (!res) {
            last_error = "transport: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw TransportError("search endpoint returned status " + std::to_string(res->status));
        }
        std::vector<Evidence> results;
        try {
            json reply = json::parse(res->body);
            for (const auto& row : reply.value("organic_results", json::array())) {
                if (static_cast<int>(results.size()) >= config_.top_k) break;
                Evidence e{row.value("title", std::string{}), row.value("snippet", std::string{}),
                           EvidenceSource::web_search, static_cast<int>(results.size()) + 1};
                results.push_back(cap_rendered_evidence(std::move(e), config_.snippet_token_cap));
            }
        } catch (const std::exception& e) {
            throw TransportError(std::string("malformed search response: ") + e.what());
        }
        return results;
    }
    throw TransportError("search failed after " + std::to_string(options_.max_attempts) +
                         " attempts (" + last_error + ")");
}

CachingRetriever::CachingRetriever(std::unique_ptr<Retriever> inner, std::string cache_dir)
    : inner_(std::move(inner)), cache_dir_(std::move(cache_dir)) {
    fs::create_directories(cache_dir_);
}

std::vector<Evidence> CachingRetriever::retrieve(const std::string& query) {
    const auto& cfg = inner_->config();
    std::string key = sha256_hex(evidence_source_name(cfg.backend) + "\n" + cfg.domain_prefix +
                                 "\n" + query);
    fs::path entry = fs::path(cache_dir_) / (key + ".json");

    {
        std::ifstream in(entry);
        if (in) {
            try {
                json j = json::parse(in);
                return j.at("evidences").get<std::vector<Evidence>>();
            } catch (const std::exception&) {
                // fall through and refresh the corrupt entry
            }
        }
    }

    auto results = inner_->retrieve(query);  // TransportError propagates uncached

    std::lock_guard<std::mutex> lock(write_mutex_);
    fs::path tmp = fs::path(cache_dir_) / (key + ".tmp");
    {
        std::ofstream out(tmp);
        out << json{{"query", query}, {"evidences", results}}.dump(2) << '\n';
    }
    fs::rename(tmp, entry);
    return results;
}

namespace {

/// Outermost layer: a failed transport degrades to "no evidence" so the
/// decomposition model answers from parametric knowledge.
class ResilientRetriever : public Retriever {
  public:
    explicit ResilientRetriever(std::unique_ptr<Retriever> inner) : inner_(std::move(inner)) {}

    std::vector<Evidence> retrieve(const std::string& query) override {
        try {
            return inner_->retrieve(query);
        } catch (const TransportError& e) {
            std::cerr << "[metachain] retrieval failed for \"" << query << "\": " << e.what()
                      << " (continuing without evidence)\n";
            return {};
        }
    }
    const RetrievalConfig& config() const override { return inner_->config(); }

  private:
    std::unique_ptr<Retriever> inner_;
};

}  // namespace

std::unique_ptr<Retriever> make_retriever(const RetrievalConfig& config) {
    std::unique_ptr<Retriever> base;
    switch (config.backend) {
        case EvidenceSource::fixture: base = std::make_unique<FixtureRetriever>(config); break;
        case EvidenceSource::local_corpus: base = std::make_unique<CorpusRetriever>(config); break;
        case EvidenceSource::web_search: base = std::make_unique<WebSearchRetriever>(config); break;
    }
    if (!config.cache_dir.empty()) {
        base = std::make_unique<CachingRetriever>(std::move(base), config.cache_dir);
    }
    return std::make_unique<ResilientRetriever>(std::move(base));
}

}  // namespace metachain::retrieval
