#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "promptforge/core.hpp"

namespace promptforge {

struct ChatRequest {
    std::optional<std::string> system_text;
    std::string user_text;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::vector<std::string> stop_sequences;
};

struct ChatResponse {
    std::string text;
    TokenUsage usage; // this call only
    std::string backend_id;
};

struct BackendConfig {
    std::string api_url;
    std::string model_id;
    std::string api_key; // falls back to $PROMPTFORGE_API_KEY when empty
    int max_concurrency = 8;
    int max_retries = 3;
    double timeout_seconds = 120.0;
    int retry_initial_delay_ms = 1000; // doubles per attempt, +-20% jitter
    bool count_tokens_locally = false; // force local counting, ignore endpoint usage
};

/// Which ledger the cumulative counts came from. Flips to local_estimate as
/// soon as any call had to be counted locally; the two sources are never
/// mixed silently.
enum class UsageSource { endpoint_reported, local_estimate };

/// Deterministic approximate tokenizer: whitespace-separated words plus
/// non-alphanumeric symbol runs. Fallback metering only.
int count_tokens(std::string_view text);

/// Uniform chat-completion interface. Handles batched parallel dispatch with
/// a shared in-flight cap and cumulative token accounting; subclasses supply
/// the per-call transport.
class LlmBackend {
public:
    explicit LlmBackend(int max_concurrency = 8);
    virtual ~LlmBackend() = default;

    /// Responses are positionally aligned with requests. At most
    /// max_concurrency requests are in flight at once across all concurrent
    /// callers. Only successful calls are metered.
    std::vector<ChatResponse> complete_batch(const std::vector<ChatRequest>& requests);

    ChatResponse complete(const ChatRequest& request);

    TokenUsage cumulative_usage() const;
    UsageSource usage_source() const;

    virtual std::string backend_id() const = 0;

protected:
    /// Perform one call. May throw BackendError / MalformedResponse.
    virtual ChatResponse call_one(const ChatRequest& request) = 0;

    /// Hook for backends whose responses depend on call order: resolve the
    /// whole batch deterministically in request order. Default runs call_one
    /// per request in parallel.
    virtual std::vector<ChatResponse> call_many(const std::vector<ChatRequest>& requests);

    void record_success(const ChatResponse& response, bool usage_was_reported);

    /// Bounded-concurrency guard acquired around every in-flight call.
    class FlightSlot {
    public:
        explicit FlightSlot(LlmBackend& backend);
        ~FlightSlot();

    private:
        LlmBackend& backend_;
    };

private:
    int max_concurrency_;
    int in_flight_ = 0;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    TokenUsage cumulative_;
    bool any_local_estimate_ = false;
    bool force_local_ = false;

protected:
    void set_force_local(bool on) { force_local_ = on; }
    bool force_local() const { return force_local_; }
};

/// OpenAI-compatible chat-completions client:
/// POST {api_url}/chat/completions with Authorization: Bearer {api_key}.
/// Transient failures (429/5xx, timeouts) retried with exponential backoff.
class HttpBackend : public LlmBackend {
public:
    explicit HttpBackend(BackendConfig config);

    std::string backend_id() const override;
    const BackendConfig& config() const noexcept { return config_; }

protected:
    ChatResponse call_one(const ChatRequest& request) override;

private:
    BackendConfig config_;
    std::string host_;   // scheme://host[:port]
    std::string prefix_; // path prefix of api_url
};

/// Deterministic backend for tests: rules map user text (exact match or
/// regex, first match wins) to an ordered list of responses consumed
/// call-by-call (last response sticks). Unknown input gets default_response.
class ScriptedBackend : public LlmBackend {
public:
    struct Rule {
        std::optional<std::string> exact;
        std::optional<std::string> pattern; // std::regex, checked when exact is empty
        std::vector<std::string> responses;
    };

    struct Options {
        std::vector<Rule> rules;
        std::string default_response = "UNKNOWN";
        /// Synthetic usage reported per call; when absent, usage is
        /// count_tokens of the request/response texts.
        std::optional<TokenUsage> fixed_usage;
        int latency_ms = 0;
        int max_concurrency = 8;
        std::string id = "scripted";
    };

    explicit ScriptedBackend(Options options);

    std::string backend_id() const override;

    // instrumentation
    std::int64_t total_calls() const;
    int max_in_flight_seen() const;

protected:
    ChatResponse call_one(const ChatRequest& request) override;
    std::vector<ChatResponse> call_many(const std::vector<ChatRequest>& requests) override;

private:
    std::string resolve_text(const std::string& user_text); // advances rule cursors
    ChatResponse finish_call(const ChatRequest& request, std::string text);

    Options options_;
    std::vector<std::size_t> cursors_;
    mutable std::mutex script_mutex_;
    std::atomic<std::int64_t> total_calls_{0};
    std::atomic<int> in_flight_now_{0};
    std::atomic<int> max_in_flight_seen_{0};
};

} // namespace promptforge
