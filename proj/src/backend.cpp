#include "metachain/backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <semaphore>
#include <thread>

#include "httplib.h"
#include "metachain/sha256.hpp"
#include "metachain/text.hpp"

namespace metachain::backend {

int count_tokens(std::string_view text, const BackendProfile& profile) {
    if (profile.tokenizer == "whitespace") {
        return static_cast<int>(text::whitespace_tokens(text).size());
    }
    if (profile.tokenizer == "approx") {
        // Rough bytes-per-token heuristic for models whose tokenizer we do
        // not ship; good enough for budgeting and length statistics.
        return static_cast<int>((text.size() + 3) / 4);
    }
    throw ConfigError("unknown tokenizer: " + profile.tokenizer);
}

std::string StructuredPrompt::render() const {
    std::string out = instruction;
    out.push_back('\n');
    for (const auto& exemplar : exemplars) {
        out += block_separator;
        out.push_back('\n');
        out += exemplar;
        out.push_back('\n');
    }
    out += block_separator;
    out.push_back('\n');
    out += task_block;
    return out;
}

StructuredPrompt trim_prompt_structured(StructuredPrompt prompt, const BackendProfile& profile,
                                        int reserve) {
    const int budget = profile.context_limit - reserve;
    while (!prompt.exemplars.empty() && count_tokens(prompt.render(), profile) > budget) {
        prompt.exemplars.pop_back();
    }
    if (count_tokens(prompt.render(), profile) > budget) {
        throw BudgetError("instruction and task block alone exceed the context budget (" +
                          std::to_string(count_tokens(prompt.render(), profile)) + " > " +
                          std::to_string(budget) + " tokens)");
    }
    return prompt;
}

std::string trim_prompt(const StructuredPrompt& prompt, const BackendProfile& profile, int reserve) {
    return trim_prompt_structured(prompt, profile, reserve).render();
}

std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops) {
    std::size_t cut = std::string::npos;
    for (const auto& stop : stops) {
        if (stop.empty()) continue;
        std::size_t pos = text.find(stop);
        if (pos != std::string::npos && pos < cut) cut = pos;
    }
    if (cut != std::string::npos) text.resize(cut);
    return text;
}

namespace {

void check_budget(const GenerationRequest& request, const BackendProfile& profile) {
    int prompt_tokens = count_tokens(request.prompt, profile);
    if (prompt_tokens + request.max_tokens > profile.context_limit) {
        throw BudgetError("prompt (" + std::to_string(prompt_tokens) + " tokens) + max_tokens (" +
                          std::to_string(request.max_tokens) + ") exceeds context limit " +
                          std::to_string(profile.context_limit));
    }
}

}  // namespace

void to_json(json& j, const Fixture& v) {
    j = json{{"prompt_hash", v.prompt_hash}, {"prompt", v.prompt}, {"completion", v.completion}};
    if (v.temperature.has_value()) j["temperature"] = *v.temperature;
    if (v.seed.has_value()) j["seed"] = *v.seed;
}

void from_json(const json& j, Fixture& v) {
    v.prompt = j.value("prompt", std::string{});
    v.prompt_hash = j.value("prompt_hash", std::string{});
    j.at("completion").get_to(v.completion);
    if (j.contains("temperature") && !j["temperature"].is_null()) v.temperature = j["temperature"].get<double>();
    if (j.contains("seed") && !j["seed"].is_null()) v.seed = j["seed"].get<std::int64_t>();
    if (v.prompt_hash.empty()) {
        if (v.prompt.empty()) throw ConfigError("fixture needs a prompt or a prompt_hash");
        v.prompt_hash = sha256_hex(v.prompt);
    }
}

ScriptedBackend::ScriptedBackend(BackendProfile profile) : profile_(std::move(profile)) {}

void ScriptedBackend::add_fixture(Fixture fixture) {
    if (fixture.prompt_hash.empty()) {
        if (fixture.prompt.empty()) throw ConfigError("fixture needs a prompt or a prompt_hash");
        fixture.prompt_hash = sha256_hex(fixture.prompt);
    }
    by_hash_[fixture.prompt_hash].push_back(fixture);
    in_order_.push_back(std::move(fixture));
}

void ScriptedBackend::add_fixture(const std::string& prompt, const std::string& completion) {
    add_fixture(Fixture{sha256_hex(prompt), prompt, completion, std::nullopt, std::nullopt});
}

void ScriptedBackend::load_fixtures(const std::string& jsonl_path) {
    for (auto& fixture : read_jsonl_file<Fixture>(jsonl_path)) add_fixture(std::move(fixture));
}

void ScriptedBackend::save_fixtures(const std::string& jsonl_path) const {
    write_jsonl_file(jsonl_path, in_order_);
}

std::size_t ScriptedBackend::fixture_count() const { return in_order_.size(); }

std::string ScriptedBackend::generate(const GenerationRequest& request) {
    check_budget(request, profile_);
    auto it = by_hash_.find(sha256_hex(request.prompt));
    const Fixture* best = nullptr;
    int best_specificity = -1;
    if (it != by_hash_.end()) {
        for (const Fixture& f : it->second) {
            int specificity = 0;
            if (f.temperature.has_value()) {
                if (std::abs(*f.temperature - request.temperature) > 1e-9) continue;
                specificity += 1;
            }
            if (f.seed.has_value()) {
                if (!request.seed.has_value() || *f.seed != *request.seed) continue;
                specificity += 2;
            }
            if (specificity > best_specificity) {
                best_specificity = specificity;
                best = &f;
            }
        }
    }
    if (best == nullptr) {
        std::string head = request.prompt.substr(request.prompt.size() > 120 ? request.prompt.size() - 120 : 0);
        throw ConfigError("no fixture for prompt (sha256 " + sha256_hex(request.prompt).substr(0, 12) +
                          ", temperature " + std::to_string(request.temperature) + ", tail \"..." + head + "\")");
    }
    return apply_stop_sequences(best->completion, request.stop_sequences);
}

DiskCache::DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::string DiskCache::request_key(const GenerationRequest& request, const std::string& model) {
    json j{{"prompt", request.prompt},
           {"temperature", request.temperature},
           {"max_tokens", request.max_tokens},
           {"stop_sequences", request.stop_sequences},
           {"model", model}};
    if (request.seed.has_value()) j["seed"] = *request.seed;
    return sha256_hex(j.dump());
}

std::optional<std::string> DiskCache::get(const std::string& key) const {
    std::ifstream in(dir_ / (key + ".json"));
    if (!in) return std::nullopt;
    try {
        json j = json::parse(in);
        return j.at("completion").get<std::string>();
    } catch (const std::exception&) {
        return std::nullopt;  // treat a corrupt entry as a miss
    }
}

void DiskCache::put(const std::string& key, const GenerationRequest& request,
                    const std::string& model, const std::string& completion) {
    json j{{"prompt", request.prompt},
           {"temperature", request.temperature},
           {"max_tokens", request.max_tokens},
           {"stop_sequences", request.stop_sequences},
           {"model", model},
           {"completion", completion}};
    if (request.seed.has_value()) j["seed"] = *request.seed;

    std::lock_guard<std::mutex> lock(write_mutex_);
    auto tmp = dir_ / (key + ".tmp");
    auto final_path = dir_ / (key + ".json");
    {
        std::ofstream out(tmp);
        out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, final_path);
}

struct HttpBackend::Impl {
    explicit Impl(const HttpBackendOptions& options)
        : client(options.base_url), in_flight(options.max_in_flight) {
        client.set_connection_timeout(options.timeout_seconds);
        client.set_read_timeout(options.timeout_seconds);
        if (!options.api_key.empty()) {
            client.set_default_headers({{"Authorization", "Bearer " + options.api_key}});
        }
    }
    httplib::Client client;
    std::counting_semaphore<256> in_flight;
};

namespace {

std::string env_or(const char* primary, const char* fallback) {
    if (const char* v = std::getenv(primary); v && *v) return v;
    if (const char* v = std::getenv(fallback); v && *v) return v;
    return {};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    if (options_.base_url.empty()) {
        options_.base_url = env_or("METACHAIN_API_BASE", "OPENAI_BASE_URL");
    }
    if (options_.base_url.empty()) {
        throw ConfigError("no LLM endpoint: set base_url or $METACHAIN_API_BASE / $OPENAI_BASE_URL");
    }
    if (options_.api_key.empty()) {
        options_.api_key = env_or("METACHAIN_API_KEY", "OPENAI_API_KEY");
    }
    if (!options_.cache_dir.empty()) {
        cache_ = std::make_unique<DiskCache>(options_.cache_dir);
    }
    impl_ = std::make_unique<Impl>(options_);
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::post_with_retries(const GenerationRequest& request) {
    json body{{"model", options_.model},
              {"messages", json::array({json{{"role", "user"}, {"content", request.prompt}}})},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
    if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
    if (request.seed.has_value()) body["seed"] = *request.seed;
    const std::string payload = body.dump();

    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    std::string last_error;
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
        if (attempt > 0) {
            auto base = std::chrono::milliseconds(options_.initial_backoff_ms) * (1 << (attempt - 1));
            auto jitter = std::chrono::milliseconds(
                jitter_rng() % std::max<std::uint64_t>(1, options_.initial_backoff_ms));
            std::this_thread::sleep_for(base + jitter);
        }

        impl_->in_flight.acquire();
        ++http_calls_;
        auto res = impl_->client.Post(options_.path, payload, "application/json");
        impl_->in_flight.release();

        if (!res) {
            last_error = "transport: " + httplib::to_string(res.error());
            continue;
        }
        if (retryable_status(res->status)) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw TransportError("LLM endpoint returned status " + std::to_string(res->status) +
                                 ": " + res->body.substr(0, 200));
        }
        try {
            json reply = json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception& e) {
            throw TransportError(std::string("malformed LLM response: ") + e.what());
        }
    }
    throw TransportError("LLM request failed after " + std::to_string(options_.max_attempts) +
                         " attempts (" + last_error + ")");
}

std::string HttpBackend::generate(const GenerationRequest& request) {
    check_budget(request, options_.profile);

    std::string key;
    if (cache_) {
        key = DiskCache::request_key(request, options_.model);
        if (auto hit = cache_->get(key)) {
            ++cache_hits_;
            return apply_stop_sequences(*hit, request.stop_sequences);
        }
        ++cache_misses_;
    }

    std::string completion = post_with_retries(request);
    if (cache_) cache_->put(key, request, options_.model, completion);
    return apply_stop_sequences(std::move(completion), request.stop_sequences);
}

}  // namespace metachain::backend
