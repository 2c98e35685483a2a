#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "metachain/core.hpp"

namespace metachain::backend {

struct GenerationRequest {
    std::string prompt;
    double temperature = 0.0;  // 0 means greedy decoding
    int max_tokens = 512;
    std::vector<std::string> stop_sequences;
    std::optional<std::int64_t> seed;
};

/// Default generation budget per decomposition step and per meta-reasoner
/// call. The source experiments never state one; configurable everywhere.
inline constexpr int kDefaultMaxTokens = 512;

/// Identifies a model's context budget and how prompt/output lengths are
/// counted. tokenizer is "whitespace" (tests, token statistics) or "approx"
/// (bytes/4 heuristic for live models whose tokenizer we do not ship).
struct BackendProfile {
    std::string name = "scripted";
    int context_limit = 8001;
    std::string tokenizer = "whitespace";
};

int count_tokens(std::string_view text, const BackendProfile& profile);

/// Few-shot prompt held in structured form so trimming can drop whole
/// exemplars instead of cutting text mid-block. Rendered layout:
///
///   {instruction}\n
///   {separator}\n{exemplar}\n   (per exemplar)
///   {separator}\n{task_block}
///
/// The task block ends mid-line at the point the model must continue, so no
/// trailing newline is added.
struct StructuredPrompt {
    std::string instruction;
    std::vector<std::string> exemplars;
    std::string task_block;
    std::string block_separator = "#";

    std::string render() const;
};

/// Drops whole exemplars from the end until the rendered prompt fits
/// context_limit - reserve. Throws BudgetError when instruction + task block
/// alone do not fit. Idempotent.
StructuredPrompt trim_prompt_structured(StructuredPrompt prompt, const BackendProfile& profile,
                                        int reserve);
std::string trim_prompt(const StructuredPrompt& prompt, const BackendProfile& profile, int reserve);

/// Text generation interface. Implementations must be safe to call from
/// multiple threads.
class Backend {
  public:
    virtual ~Backend() = default;

    /// Returns the continuation, truncated at the first stop sequence.
    /// Throws BudgetError when prompt tokens + max_tokens exceed the
    /// profile's context limit, TransportError when the live transport fails
    /// after all retries, and ConfigError for missing fixtures.
    virtual std::string generate(const GenerationRequest& request) = 0;

    virtual const BackendProfile& profile() const = 0;
};

/// Truncates at the earliest occurrence of any stop sequence.
std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops);

/// One scripted completion. temperature/seed act as optional constraints so
/// a fixture file can hold several draws for the same prompt.
struct Fixture {
    std::string prompt_hash;  // sha256 of the prompt
    std::string prompt;       // may be empty when only the hash is known
    std::string completion;
    std::optional<double> temperature;
    std::optional<std::int64_t> seed;
};

void to_json(json& j, const Fixture& v);
void from_json(const json& j, Fixture& v);

/// Deterministic replay backend for tests and offline runs. Lookup is by
/// prompt hash, preferring the fixture whose temperature/seed constraints
/// match the request most specifically. Same request, same response, across
/// process restarts.
class ScriptedBackend : public Backend {
  public:
    explicit ScriptedBackend(BackendProfile profile = {"scripted", 1 << 20, "whitespace"});

    void add_fixture(Fixture fixture);
    void add_fixture(const std::string& prompt, const std::string& completion);
    void load_fixtures(const std::string& jsonl_path);
    void save_fixtures(const std::string& jsonl_path) const;

    std::string generate(const GenerationRequest& request) override;
    const BackendProfile& profile() const override { return profile_; }
    std::size_t fixture_count() const;

  private:
    BackendProfile profile_;
    std::map<std::string, std::vector<Fixture>> by_hash_;
    std::vector<Fixture> in_order_;  // preserves file order for save_fixtures
};

/// Content-addressed response cache. One JSON file per request key; writes
/// go through a temp file + rename and are serialized by a mutex, so
/// concurrent generate() calls for the same key cannot interleave.
class DiskCache {
  public:
    explicit DiskCache(std::filesystem::path dir);

    static std::string request_key(const GenerationRequest& request, const std::string& model);

    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const GenerationRequest& request, const std::string& model,
             const std::string& completion);

  private:
    std::filesystem::path dir_;
    mutable std::mutex write_mutex_;
};

struct HttpBackendOptions {
    std::string base_url;  // empty: $METACHAIN_API_BASE, then $OPENAI_BASE_URL
    std::string api_key;   // empty: $METACHAIN_API_KEY, then $OPENAI_API_KEY
    std::string model = "gpt-4o-mini";
    std::string path = "/v1/chat/completions";
    std::string cache_dir;  // empty disables the cache
    int max_attempts = 5;
    int initial_backoff_ms = 500;
    int max_in_flight = 4;
    int timeout_seconds = 120;
    BackendProfile profile = {"http", 8001, "approx"};
};

/// Chat-completions-style HTTP client with bounded retries (exponential
/// backoff plus jitter), a concurrency bound on in-flight requests, and
/// write-through disk caching. The prompt is sent byte-for-byte as the user
/// message content; this client never rewrites it.
class HttpBackend : public Backend {
  public:
    explicit HttpBackend(HttpBackendOptions options);
    ~HttpBackend() override;

    std::string generate(const GenerationRequest& request) override;
    const BackendProfile& profile() const override { return options_.profile; }

    // Observability for cache verification (a re-run of an identical
    // experiment must hit the cache for every call).
    std::uint64_t cache_hits() const { return cache_hits_; }
    std::uint64_t cache_misses() const { return cache_misses_; }
    std::uint64_t http_calls() const { return http_calls_; }

  private:
    std::string post_with_retries(const GenerationRequest& request);

    HttpBackendOptions options_;
    std::unique_ptr<DiskCache> cache_;
    struct Impl;  // holds the httplib client and the in-flight semaphore
    std::unique_ptr<Impl> impl_;
    std::atomic<std::uint64_t> cache_hits_{0};
    std::atomic<std::uint64_t> cache_misses_{0};
    std::atomic<std::uint64_t> http_calls_{0};
};

}  // namespace metachain::backend
