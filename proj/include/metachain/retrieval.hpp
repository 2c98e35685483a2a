#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "metachain/core.hpp"

namespace metachain::retrieval {

struct RetrievalConfig {
    EvidenceSource backend = EvidenceSource::fixture;
    std::string domain_prefix = "en.wikipedia.org";
    int top_k = 1;  // the pipeline consumes only the first result
    bool retrieve_for_original_question = true;

    std::string fixtures_path;  // fixture backend: JSONL of {query, title, snippet}
    std::string corpus_path;    // local_corpus backend: {title, text} JSONL file or directory
    std::string cache_dir;      // non-empty enables the on-disk retrieval cache

    /// Rendered evidence ("{title}: {snippet}") is capped to this many
    /// whitespace tokens; snippets are truncated to fit.
    int snippet_token_cap = 100;
};

void to_json(json& j, const RetrievalConfig& v);
void from_json(const json& j, RetrievalConfig& v);

/// Maps a question to ranked evidence. Implementations are thread-safe and
/// pure: repeated calls with the same query return identical results.
class Retriever {
  public:
    virtual ~Retriever() = default;

    /// Up to top_k results, best first. Empty when nothing matches or the
    /// transport gave up; the pipeline then proceeds without evidence.
    virtual std::vector<Evidence> retrieve(const std::string& query) = 0;

    virtual const RetrievalConfig& config() const = 0;

    /// Top-1 evidence for the original question, or nothing when
    /// retrieve_for_original_question is off (the Fermi configuration).
    std::optional<Evidence> retrieve_for_chain_start(const std::string& question);
};

/// Replays {query, title, snippet} JSONL rows; multiple rows for one query
/// rank in file order.
class FixtureRetriever : public Retriever {
  public:
    FixtureRetriever(RetrievalConfig config);

    std::vector<Evidence> retrieve(const std::string& query) override;
    const RetrievalConfig& config() const override { return config_; }

  private:
    RetrievalConfig config_;
    std::map<std::string, std::vector<Evidence>> by_query_;
};

/// Deterministic lexical retriever: BM25 term weighting over passages built
/// from 3-sentence sliding windows, ties broken by document order then
/// passage order. Fills the web-search interface for offline runs.
class CorpusRetriever : public Retriever {
  public:
    CorpusRetriever(RetrievalConfig config);

    std::vector<Evidence> retrieve(const std::string& query) override;
    const RetrievalConfig& config() const override { return config_; }

    std::size_t passage_count() const { return passages_.size(); }

  private:
    struct Passage {
        int doc = 0;
        int index = 0;  // position within the document
        std::string text;
        std::map<std::string, int> term_counts;
        int length = 0;
    };

    RetrievalConfig config_;
    std::vector<std::string> doc_titles_;
    std::vector<Passage> passages_;
    std::map<std::string, int> document_frequency_;
    double avg_passage_length_ = 0.0;
};

struct WebSearchOptions {
    std::string base_url;  // empty: $METACHAIN_SEARCH_URL, else https://serpapi.com
    std::string api_key;   // empty: $METACHAIN_SEARCH_API_KEY, then $SERPAPI_API_KEY
    int max_attempts = 3;
    int initial_backoff_ms = 250;
    int timeout_seconds = 30;
};

/// SerpAPI-style search client. Issues the query string
/// "{domain_prefix} {query}" and reads organic_results titles/snippets.
/// Throws TransportError after the retry budget; make_retriever wraps it so
/// failures degrade to an empty result list.
class WebSearchRetriever : public Retriever {
  public:
    WebSearchRetriever(RetrievalConfig config, WebSearchOptions options = {});
    ~WebSearchRetriever() override;

    std::vector<Evidence> retrieve(const std::string& query) override;
    const RetrievalConfig& config() const override { return config_; }

  private:
    RetrievalConfig config_;
    WebSearchOptions options_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Write-through cache keyed by (backend, domain_prefix, query). Failures
/// propagate uncached so a transient outage cannot pin an empty result.
class CachingRetriever : public Retriever {
  public:
    CachingRetriever(std::unique_ptr<Retriever> inner, std::string cache_dir);

    std::vector<Evidence> retrieve(const std::string& query) override;
    const RetrievalConfig& config() const override { return inner_->config(); }

  private:
    std::unique_ptr<Retriever> inner_;
    std::string cache_dir_;
    std::mutex write_mutex_;
};

/// Builds the configured retriever stack: backend, optional cache, and an
/// outer layer that turns TransportError into an empty result list.
std::unique_ptr<Retriever> make_retriever(const RetrievalConfig& config);

/// Truncates the snippet so the rendered form stays within cap whitespace
/// tokens. Exposed for tests.
Evidence cap_rendered_evidence(Evidence evidence, int cap);

}  // namespace metachain::retrieval
