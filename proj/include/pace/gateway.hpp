#pragma once

#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "pace/core.hpp"
#include "pace/error.hpp"

namespace pace {

enum class Role { system, user };

std::string role_string(Role role);

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

// actor/critic/update are the optimizer's roles; eval marks scoring calls so
// run artifacts can prove that no optimization request ever saw test data.
enum class RequestTag { actor, critic, update, eval };

std::string request_tag_string(RequestTag tag);
std::optional<RequestTag> request_tag_from_string(const std::string& s);

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    double top_p = 1.0;
    int max_tokens = 512;
    RequestTag tag = RequestTag::actor;
};

enum class FinishReason { stop, length, error };

std::string finish_reason_string(FinishReason reason);

enum class ResponseSource { live, cache, mock };

struct ChatResponse {
    std::string content;
    FinishReason finish_reason = FinishReason::stop;
    ResponseSource source = ResponseSource::mock;
};

enum class BackendKind { live, replay, mock };

std::optional<BackendKind> backend_kind_from_string(const std::string& s);
std::string backend_kind_string(BackendKind kind);

struct RetryPolicy {
    int max_attempts = 5;
    int backoff_base_ms = 100;
};

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::string base_url;                    // live
    std::string api_key_env = "PACE_API_KEY";
    std::string cache_dir;                   // live (record) + replay
    std::string mock_script;                 // mock
    RetryPolicy retry;
    std::string model = "gpt-3.5-turbo";
    // Optional per-tag model override ("actor"/"critic"/"update"/"eval").
    std::map<std::string, std::string> tag_models;
    // The rendered template normally travels as a single user message; a
    // nonempty preamble rides along as a system message in front of it.
    std::string system_preamble;

    std::string model_for(RequestTag tag) const;
};

// Stable fingerprint of (model, messages, temperature, top_p, max_tokens).
// The tag is excluded: it routes mocks and logs, it does not change the call.
struct CacheKey {
    std::string fingerprint;
};

CacheKey cache_key(const ChatRequest& request);

// Canonical JSON round trip; fingerprints survive serialize + re-parse.
std::string request_to_canonical_json(const ChatRequest& request);
ChatRequest request_from_canonical_json(const std::string& json_text);

// --- cache ------------------------------------------------------------------

// One file per fingerprint under dir, written atomically (temp + rename).
// Rewriting the same key with identical content is a no-op.
void cache_store(const CacheKey& key, const ChatRequest& request, const ChatResponse& response,
                 const std::string& dir);
std::optional<ChatResponse> cache_load(const CacheKey& key, const std::string& dir);

// --- mock -------------------------------------------------------------------

struct MockRule {
    std::optional<RequestTag> tag; // absent = any tag
    std::string pattern;
    std::regex re;
    std::string response; // $1..$9 substitute capture groups
};

class MockScript {
public:
    static MockScript parse(const std::string& json_text);
    static MockScript load(const std::string& path);

    MockScript& add_rule(std::optional<RequestTag> tag, const std::string& pattern,
                         const std::string& response);
    MockScript& set_default(const std::string& response);

    // First rule whose (tag, pattern) matches the concatenated message
    // content wins; no match falls through to the default rule.
    ChatResponse respond(const ChatRequest& request) const;

    std::string to_json() const;

private:
    std::vector<MockRule> rules_;
    std::optional<std::string> default_response_;
};

ChatResponse mock_respond(const ChatRequest& request, const MockScript& script);

// --- gateway ----------------------------------------------------------------

// Uniform chat-completion interface over the three interchangeable backends.
// complete() is const and safe to call from concurrent workers.
class Gateway {
public:
    // Sees every request complete() handles; must be thread-safe, since the
    // optimizer fans out calls concurrently.
    using RequestObserver = std::function<void(const ChatRequest&)>;

    explicit Gateway(BackendConfig config);
    Gateway(BackendConfig config, MockScript script);

    void set_request_observer(RequestObserver observer) { observer_ = std::move(observer); }

    const BackendConfig& config() const { return config_; }

    // Single user-role message carrying the rendered template, decoding
    // settings from the arguments (defaults match ChatRequest).
    ChatRequest make_request(RequestTag tag, const std::string& content, double temperature = 0.0,
                             double top_p = 1.0, int max_tokens = 512) const;

    // Fingerprint the request exactly as complete() will see it (an empty
    // model resolves to the configured one first).
    CacheKey key_for(const ChatRequest& request) const;

    ChatResponse complete(const ChatRequest& request) const;

private:
    ChatResponse complete_live(const ChatRequest& request, const CacheKey& key) const;

    BackendConfig config_;
    MockScript script_;
    RequestObserver observer_;
};

// One-shot convenience over a freshly constructed Gateway.
ChatResponse complete(const ChatRequest& request, const BackendConfig& backend);

} // namespace pace
