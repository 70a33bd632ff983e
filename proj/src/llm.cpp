#include "promptforge/llm.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "promptforge/errors.hpp"
#include "promptforge/rng.hpp"

namespace promptforge {

using json = nlohmann::json;

int count_tokens(std::string_view text) {
    int words = 0;
    int symbol_runs = 0;
    bool in_word = false;
    bool in_symbols = false;
    for (unsigned char c : text) {
        bool space = std::isspace(c) != 0;
        bool alnum = std::isalnum(c) != 0;
        if (!space && !in_word) words++;
        in_word = !space;
        bool symbol = !space && !alnum;
        if (symbol && !in_symbols) symbol_runs++;
        in_symbols = symbol;
    }
    return words + symbol_runs;
}

// ---------------------------------------------------------------------------
// LlmBackend
// ---------------------------------------------------------------------------

LlmBackend::LlmBackend(int max_concurrency) : max_concurrency_(max_concurrency < 1 ? 1 : max_concurrency) {}

LlmBackend::FlightSlot::FlightSlot(LlmBackend& backend) : backend_(backend) {
    std::unique_lock lock(backend_.mutex_);
    backend_.cv_.wait(lock, [&] { return backend_.in_flight_ < backend_.max_concurrency_; });
    backend_.in_flight_++;
}

LlmBackend::FlightSlot::~FlightSlot() {
    {
        std::lock_guard lock(backend_.mutex_);
        backend_.in_flight_--;
    }
    backend_.cv_.notify_one();
}

void LlmBackend::record_success(const ChatResponse& response, bool usage_was_reported) {
    std::lock_guard lock(mutex_);
    cumulative_ += response.usage;
    if (!usage_was_reported) any_local_estimate_ = true;
}

TokenUsage LlmBackend::cumulative_usage() const {
    std::lock_guard lock(mutex_);
    return cumulative_;
}

UsageSource LlmBackend::usage_source() const {
    std::lock_guard lock(mutex_);
    return (force_local_ || any_local_estimate_) ? UsageSource::local_estimate : UsageSource::endpoint_reported;
}

std::vector<ChatResponse> LlmBackend::complete_batch(const std::vector<ChatRequest>& requests) {
    if (requests.empty()) return {};
    for (const auto& request : requests) {
        if (request.user_text.empty()) throw Error("chat request has empty user text");
        if (request.temperature < 0.0 || request.temperature > 2.0) {
            throw Error("chat request temperature out of range: " + std::to_string(request.temperature));
        }
    }
    return call_many(requests);
}

ChatResponse LlmBackend::complete(const ChatRequest& request) {
    return complete_batch({request}).front();
}

std::vector<ChatResponse> LlmBackend::call_many(const std::vector<ChatRequest>& requests) {
    std::vector<ChatResponse> responses(requests.size());
    std::size_t n_workers = std::min<std::size_t>(requests.size(), static_cast<std::size_t>(max_concurrency_));
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            try {
                FlightSlot slot(*this);
                responses[i] = call_one(requests[i]);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return responses;
}

// ---------------------------------------------------------------------------
// HttpBackend
// ---------------------------------------------------------------------------

namespace {

TokenUsage local_usage_estimate(const ChatRequest& request, const std::string& response_text) {
    TokenUsage usage;
    usage.input_tokens = count_tokens(request.user_text);
    if (request.system_text) usage.input_tokens += count_tokens(*request.system_text);
    usage.output_tokens = count_tokens(response_text);
    return usage;
}

int backoff_with_jitter_ms(int base_ms, int attempt) {
    static std::atomic<std::uint64_t> nonce{0x9e3779b97f4a7c15ULL};
    Rng jitter(nonce.fetch_add(1));
    double delay = static_cast<double>(base_ms) * static_cast<double>(1 << attempt);
    double factor = 0.8 + 0.4 * jitter.next_double(); // +-20%
    return static_cast<int>(delay * factor);
}

} // namespace

HttpBackend::HttpBackend(BackendConfig config) : LlmBackend(config.max_concurrency), config_(std::move(config)) {
    if (config_.api_key.empty()) {
        if (const char* env = std::getenv("PROMPTFORGE_API_KEY")) config_.api_key = env;
    }
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(config_.api_url, m, url_re)) {
        throw ConfigError("api_url is not an absolute http(s) URL: " + config_.api_url);
    }
    host_ = m[1].str();
    prefix_ = m[2].matched ? m[2].str() : "";
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (config_.count_tokens_locally) set_force_local(true);
}

std::string HttpBackend::backend_id() const {
    return config_.model_id + "@" + host_;
}

ChatResponse HttpBackend::call_one(const ChatRequest& request) {
    json body;
    body["model"] = config_.model_id;
    json messages = json::array();
    if (request.system_text) {
        messages.push_back({{"role", "system"}, {"content", *request.system_text}});
    }
    messages.push_back({{"role", "user"}, {"content", request.user_text}});
    body["messages"] = std::move(messages);
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_output_tokens;
    if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    int last_status = 0;
    std::string last_body;
    for (int attempt = 0;; ++attempt) {
        httplib::Client client(host_);
        client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_seconds));
        client.set_read_timeout(std::chrono::duration<double>(config_.timeout_seconds));
        client.set_write_timeout(std::chrono::duration<double>(config_.timeout_seconds));

        auto result = client.Post(prefix_ + "/chat/completions", headers, payload, "application/json");

        bool transient = false;
        if (!result) {
            transient = true; // connection failure or timeout
            last_status = 0;
            last_body = httplib::to_string(result.error());
        } else {
            last_status = result->status;
            last_body = result->body;
            if (result->status == 200) {
                json reply;
                try {
                    reply = json::parse(result->body);
                } catch (const json::exception& e) {
                    throw MalformedResponse(std::string("endpoint returned unparseable JSON: ") + e.what());
                }
                if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty()) {
                    throw MalformedResponse("endpoint returned no choices");
                }
                const auto& choice = reply["choices"][0];
                if (!choice.contains("message") || !choice["message"].contains("content")) {
                    throw MalformedResponse("endpoint choice has no message content");
                }
                ChatResponse response;
                response.text = choice["message"]["content"].get<std::string>();
                response.backend_id = backend_id();
                bool usage_reported = false;
                if (!config_.count_tokens_locally && reply.contains("usage") && reply["usage"].is_object()) {
                    const auto& usage = reply["usage"];
                    response.usage.input_tokens = usage.value("prompt_tokens", 0);
                    response.usage.output_tokens = usage.value("completion_tokens", 0);
                    usage_reported = true;
                } else {
                    response.usage = local_usage_estimate(request, response.text);
                }
                record_success(response, usage_reported);
                return response;
            }
            transient = result->status == 429 || result->status >= 500;
        }

        if (!transient || attempt >= config_.max_retries) {
            std::string excerpt = last_body.substr(0, 200);
            throw BackendError("chat completion failed (status " + std::to_string(last_status) + ") after " +
                                   std::to_string(attempt + 1) + " attempt(s): " + excerpt,
                               last_status, excerpt);
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_with_jitter_ms(config_.retry_initial_delay_ms, attempt)));
    }
}

// ---------------------------------------------------------------------------
// ScriptedBackend
// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(Options options)
    : LlmBackend(options.max_concurrency), options_(std::move(options)), cursors_(options_.rules.size(), 0) {}

std::string ScriptedBackend::backend_id() const {
    return options_.id;
}

std::string ScriptedBackend::resolve_text(const std::string& user_text) {
    std::lock_guard lock(script_mutex_);
    for (std::size_t i = 0; i < options_.rules.size(); ++i) {
        const auto& rule = options_.rules[i];
        bool matched = false;
        if (rule.exact) {
            matched = *rule.exact == user_text;
        } else if (rule.pattern) {
            matched = std::regex_search(user_text, std::regex(*rule.pattern));
        }
        if (!matched) continue;
        if (rule.responses.empty()) return options_.default_response;
        std::size_t cursor = cursors_[i];
        if (cursor + 1 < rule.responses.size()) cursors_[i] = cursor + 1; // last response sticks
        return rule.responses[cursor];
    }
    return options_.default_response;
}

ChatResponse ScriptedBackend::finish_call(const ChatRequest& request, std::string text) {
    int now = in_flight_now_.fetch_add(1) + 1;
    int seen = max_in_flight_seen_.load();
    while (now > seen && !max_in_flight_seen_.compare_exchange_weak(seen, now)) {
    }
    if (options_.latency_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));
    }
    in_flight_now_.fetch_sub(1);

    ChatResponse response;
    response.text = std::move(text);
    response.backend_id = options_.id;
    response.usage = options_.fixed_usage ? *options_.fixed_usage : local_usage_estimate(request, response.text);
    total_calls_.fetch_add(1);
    record_success(response, /*usage_was_reported=*/true);
    return response;
}

ChatResponse ScriptedBackend::call_one(const ChatRequest& request) {
    return finish_call(request, resolve_text(request.user_text));
}

std::vector<ChatResponse> ScriptedBackend::call_many(const std::vector<ChatRequest>& requests) {
    // Sequential-rule cursors must advance in request order, not completion
    // order, or seeded runs would not replay identically.
    std::vector<std::string> texts;
    texts.reserve(requests.size());
    for (const auto& request : requests) texts.push_back(resolve_text(request.user_text));

    std::vector<ChatResponse> responses(requests.size());
    std::size_t n_workers = std::min<std::size_t>(requests.size(), 64);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            FlightSlot slot(*this);
            responses[i] = finish_call(requests[i], std::move(texts[i]));
        }
    };
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return responses;
}

std::int64_t ScriptedBackend::total_calls() const {
    return total_calls_.load();
}

int ScriptedBackend::max_in_flight_seen() const {
    return max_in_flight_seen_.load();
}

} // namespace promptforge
