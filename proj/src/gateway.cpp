#include "pace/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#ifdef PACE_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace pace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string role_string(Role role) {
    return role == Role::system ? "system" : "user";
}

std::string request_tag_string(RequestTag tag) {
    switch (tag) {
    case RequestTag::actor: return "actor";
    case RequestTag::critic: return "critic";
    case RequestTag::update: return "update";
    case RequestTag::eval: return "eval";
    }
    return "actor";
}

std::optional<RequestTag> request_tag_from_string(const std::string& s) {
    if (s == "actor") return RequestTag::actor;
    if (s == "critic") return RequestTag::critic;
    if (s == "update") return RequestTag::update;
    if (s == "eval") return RequestTag::eval;
    return std::nullopt;
}

std::string finish_reason_string(FinishReason reason) {
    switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
    }
    return "stop";
}

std::optional<BackendKind> backend_kind_from_string(const std::string& s) {
    if (s == "live") return BackendKind::live;
    if (s == "replay") return BackendKind::replay;
    if (s == "mock") return BackendKind::mock;
    return std::nullopt;
}

std::string backend_kind_string(BackendKind kind) {
    switch (kind) {
    case BackendKind::live: return "live";
    case BackendKind::replay: return "replay";
    case BackendKind::mock: return "mock";
    }
    return "mock";
}

std::string BackendConfig::model_for(RequestTag tag) const {
    auto it = tag_models.find(request_tag_string(tag));
    if (it != tag_models.end() && !it->second.empty()) return it->second;
    return model;
}

// --- canonical serialization & fingerprint -----------------------------------

std::string request_to_canonical_json(const ChatRequest& request) {
    json doc;
    doc["model"] = request.model;
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", role_string(m.role)}, {"content", m.content}});
    }
    doc["messages"] = messages;
    doc["temperature"] = request.temperature;
    doc["top_p"] = request.top_p;
    doc["max_tokens"] = request.max_tokens;
    return doc.dump();
}

ChatRequest request_from_canonical_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::data, std::string("request is not valid JSON: ") + e.what());
    }
    ChatRequest request;
    try {
        request.model = doc.at("model").get<std::string>();
        for (const auto& m : doc.at("messages")) {
            ChatMessage msg;
            msg.role = m.at("role").get<std::string>() == "system" ? Role::system : Role::user;
            msg.content = m.at("content").get<std::string>();
            request.messages.push_back(std::move(msg));
        }
        request.temperature = doc.at("temperature").get<double>();
        request.top_p = doc.at("top_p").get<double>();
        request.max_tokens = doc.at("max_tokens").get<int>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::data, std::string("malformed request JSON: ") + e.what());
    }
    return request;
}

namespace {

std::uint64_t fnv1a64(const std::string& data, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

} // namespace

CacheKey cache_key(const ChatRequest& request) {
    const std::string canon = request_to_canonical_json(request);
    const std::uint64_t a = fnv1a64(canon, 0xcbf29ce484222325ULL);
    const std::uint64_t b = fnv1a64(canon, 0xcbf29ce484222325ULL ^ 0x9e3779b97f4a7c15ULL);
    return CacheKey{hex64(a) + hex64(b)};
}

// --- cache -------------------------------------------------------------------

namespace {

std::string cache_path(const std::string& dir, const std::string& fingerprint) {
    return (fs::path(dir) / (fingerprint + ".json")).string();
}

json response_to_json(const ChatResponse& response) {
    return json{{"content", response.content},
                {"finish_reason", finish_reason_string(response.finish_reason)}};
}

ChatResponse response_from_json(const json& doc, ResponseSource source) {
    ChatResponse response;
    response.content = doc.at("content").get<std::string>();
    const std::string reason = doc.at("finish_reason").get<std::string>();
    response.finish_reason = reason == "length"  ? FinishReason::length
                             : reason == "error" ? FinishReason::error
                                                 : FinishReason::stop;
    response.source = source;
    return response;
}

} // namespace

void cache_store(const CacheKey& key, const ChatRequest& request, const ChatResponse& response,
                 const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);

    json doc;
    doc["fingerprint"] = key.fingerprint;
    doc["request"] = json::parse(request_to_canonical_json(request));
    doc["response"] = response_to_json(response);
    const std::string payload = doc.dump(2) + "\n";

    const std::string final_path = cache_path(dir, key.fingerprint);
    {
        std::ifstream existing(final_path, std::ios::binary);
        if (existing) {
            std::ostringstream buf;
            buf << existing.rdbuf();
            if (buf.str() == payload) return; // identical rewrite is a no-op
        }
    }

    static std::atomic<std::uint64_t> counter{0};
    std::ostringstream tmp_name;
    tmp_name << final_path << ".tmp." << std::random_device{}() << "." << counter.fetch_add(1);
    const std::string tmp_path = tmp_name.str();
    {
        std::ofstream out(tmp_path, std::ios::binary);
        if (!out) {
            throw Error(ErrorKind::backend, "cache write failed: " + tmp_path);
        }
        out << payload;
        if (!out.good()) {
            throw Error(ErrorKind::backend, "cache write failed: " + tmp_path);
        }
    }
    fs::rename(tmp_path, final_path, ec);
    if (ec) {
        fs::remove(tmp_path, ec);
        throw Error(ErrorKind::backend, "cache write failed: " + final_path);
    }
}

std::optional<ChatResponse> cache_load(const CacheKey& key, const std::string& dir) {
    std::ifstream in(cache_path(dir, key.fingerprint), std::ios::binary);
    if (!in) return std::nullopt;
    json doc;
    try {
        in >> doc;
        return response_from_json(doc.at("response"), ResponseSource::cache);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::backend,
                    "corrupt cache entry " + key.fingerprint + ": " + e.what());
    }
}

// --- mock --------------------------------------------------------------------

MockScript MockScript::parse(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, std::string("mock script is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorKind::config, "mock script must be a JSON array");
    }
    MockScript script;
    for (const auto& entry : doc) {
        if (entry.contains("default")) {
            script.set_default(entry.at("default").get<std::string>());
            continue;
        }
        std::optional<RequestTag> tag;
        if (entry.contains("tag") && !entry.at("tag").get<std::string>().empty()) {
            tag = request_tag_from_string(entry.at("tag").get<std::string>());
            if (!tag) {
                throw Error(ErrorKind::config,
                            "mock script: unknown tag '" + entry.at("tag").get<std::string>() + "'");
            }
        }
        script.add_rule(tag, entry.at("pattern").get<std::string>(),
                        entry.at("response").get<std::string>());
    }
    return script;
}

MockScript MockScript::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::config, "cannot read mock script: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

MockScript& MockScript::add_rule(std::optional<RequestTag> tag, const std::string& pattern,
                                 const std::string& response) {
    MockRule rule;
    rule.tag = tag;
    rule.pattern = pattern;
    try {
        rule.re = std::regex(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw Error(ErrorKind::config, "mock script: bad pattern '" + pattern + "': " + e.what());
    }
    rule.response = response;
    rules_.push_back(std::move(rule));
    return *this;
}

MockScript& MockScript::set_default(const std::string& response) {
    default_response_ = response;
    return *this;
}

std::string MockScript::to_json() const {
    json doc = json::array();
    for (const auto& rule : rules_) {
        json entry;
        if (rule.tag) entry["tag"] = request_tag_string(*rule.tag);
        entry["pattern"] = rule.pattern;
        entry["response"] = rule.response;
        doc.push_back(entry);
    }
    if (default_response_) {
        doc.push_back(json{{"default", *default_response_}});
    }
    return doc.dump(2);
}

namespace {

std::string substitute_captures(const std::string& tmpl, const std::smatch& match) {
    std::string out;
    out.reserve(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '$' && i + 1 < tmpl.size()) {
            const char next = tmpl[i + 1];
            if (next == '$') {
                out += '$';
                ++i;
                continue;
            }
            if (next >= '0' && next <= '9') {
                const std::size_t group = static_cast<std::size_t>(next - '0');
                if (group < match.size()) out += match[group].str();
                ++i;
                continue;
            }
        }
        out += tmpl[i];
    }
    return out;
}

std::string concatenated_content(const ChatRequest& request) {
    std::string content;
    for (std::size_t i = 0; i < request.messages.size(); ++i) {
        if (i > 0) content += '\n';
        content += request.messages[i].content;
    }
    return content;
}

} // namespace

ChatResponse MockScript::respond(const ChatRequest& request) const {
    const std::string content = concatenated_content(request);
    for (const auto& rule : rules_) {
        if (rule.tag && *rule.tag != request.tag) continue;
        std::smatch match;
        if (std::regex_search(content, match, rule.re)) {
            return ChatResponse{substitute_captures(rule.response, match), FinishReason::stop,
                                ResponseSource::mock};
        }
    }
    if (default_response_) {
        return ChatResponse{*default_response_, FinishReason::stop, ResponseSource::mock};
    }
    throw Error(ErrorKind::backend, "mock unmatched request");
}

ChatResponse mock_respond(const ChatRequest& request, const MockScript& script) {
    return script.respond(request);
}

// --- gateway -----------------------------------------------------------------

Gateway::Gateway(BackendConfig config) : config_(std::move(config)) {
    if (config_.kind == BackendKind::mock) {
        if (config_.mock_script.empty()) {
            throw Error(ErrorKind::config, "mock backend requires mock_script");
        }
        script_ = MockScript::load(config_.mock_script);
    }
    if (config_.kind == BackendKind::live && config_.base_url.empty()) {
        throw Error(ErrorKind::config, "live backend requires base_url");
    }
    if (config_.kind == BackendKind::replay && config_.cache_dir.empty()) {
        throw Error(ErrorKind::config, "replay backend requires cache_dir");
    }
}

Gateway::Gateway(BackendConfig config, MockScript script)
    : config_(std::move(config)), script_(std::move(script)) {
    config_.kind = BackendKind::mock;
}

ChatRequest Gateway::make_request(RequestTag tag, const std::string& content, double temperature,
                                  double top_p, int max_tokens) const {
    ChatRequest request;
    request.model = config_.model_for(tag);
    if (!config_.system_preamble.empty()) {
        request.messages.push_back(ChatMessage{Role::system, config_.system_preamble});
    }
    request.messages.push_back(ChatMessage{Role::user, content});
    request.temperature = temperature;
    request.top_p = top_p;
    request.max_tokens = max_tokens;
    request.tag = tag;
    return request;
}

namespace {

struct ParsedUrl {
    std::string origin;      // scheme://host[:port]
    std::string path_prefix; // may be empty
};

ParsedUrl parse_base_url(const std::string& base_url) {
    const std::size_t scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(ErrorKind::config, "base_url must include a scheme: " + base_url);
    }
    const std::size_t path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return ParsedUrl{base_url, ""};
    }
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return ParsedUrl{base_url.substr(0, path_start), prefix};
}

bool transient_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

} // namespace

ChatResponse Gateway::complete_live(const ChatRequest& request, const CacheKey& key) const {
    const char* key_from_env = nullptr;
    if (const char* v = std::getenv("PACE_API_KEY"); v && *v) {
        key_from_env = v;
    } else if (!config_.api_key_env.empty()) {
        key_from_env = std::getenv(config_.api_key_env.c_str());
    }
    if (!key_from_env || !*key_from_env) {
        throw Error(ErrorKind::config,
                    "API key environment variable " + config_.api_key_env + " is not set");
    }

    const ParsedUrl url = parse_base_url(config_.base_url);

    json body;
    body["model"] = request.model;
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", role_string(m.role)}, {"content", m.content}});
    }
    body["messages"] = messages;
    body["temperature"] = request.temperature;
    body["top_p"] = request.top_p;
    body["max_tokens"] = request.max_tokens;
    const std::string payload = body.dump();

    const int attempts = std::max(1, config_.retry.max_attempts);
    std::string last_failure = "no attempt made";
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            const int doublings = std::min(attempt - 1, 16);
            const auto delay =
                std::chrono::milliseconds(config_.retry.backoff_base_ms) * (1LL << doublings);
            std::this_thread::sleep_for(delay);
        }

        httplib::Client client(url.origin);
        client.set_connection_timeout(30, 0);
        client.set_read_timeout(120, 0);
        httplib::Headers headers{{"Authorization", std::string("Bearer ") + key_from_env}};
        auto result =
            client.Post(url.path_prefix + "/chat/completions", headers, payload, "application/json");

        if (!result) {
            last_failure = "transport error " + httplib::to_string(result.error());
            continue;
        }
        if (transient_status(result->status)) {
            last_failure = "HTTP " + std::to_string(result->status);
            continue;
        }
        if (result->status < 200 || result->status >= 300) {
            throw Error(ErrorKind::backend,
                        "rejected request (HTTP " + std::to_string(result->status) + ")");
        }

        json doc;
        try {
            doc = json::parse(result->body);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::backend, std::string("unparseable completion response: ") + e.what());
        }
        ChatResponse response;
        try {
            const auto& choice = doc.at("choices").at(0);
            response.content = choice.at("message").at("content").get<std::string>();
            const std::string reason = choice.value("finish_reason", "stop");
            response.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
        } catch (const json::exception& e) {
            throw Error(ErrorKind::backend, std::string("unexpected completion shape: ") + e.what());
        }
        response.source = ResponseSource::live;
        if (!config_.cache_dir.empty()) {
            cache_store(key, request, response, config_.cache_dir);
        }
        return response;
    }
    throw Error(ErrorKind::backend, "backend unavailable (" + last_failure + ")");
}

CacheKey Gateway::key_for(const ChatRequest& request) const {
    ChatRequest resolved = request;
    if (resolved.model.empty()) {
        resolved.model = config_.model_for(request.tag);
    }
    return cache_key(resolved);
}

ChatResponse Gateway::complete(const ChatRequest& request) const {
    if (request.messages.empty()) {
        throw Error(ErrorKind::data, "request has no messages");
    }
    ChatRequest resolved = request;
    if (resolved.model.empty()) {
        resolved.model = config_.model_for(request.tag);
    }
    const CacheKey key = cache_key(resolved);
    if (observer_) observer_(resolved);

    switch (config_.kind) {
    case BackendKind::mock:
        return script_.respond(resolved);
    case BackendKind::replay: {
        auto cached = cache_load(key, config_.cache_dir);
        if (!cached) {
            throw Error(ErrorKind::backend, "cache miss: " + key.fingerprint);
        }
        return *cached;
    }
    case BackendKind::live: {
        if (!config_.cache_dir.empty()) {
            if (auto cached = cache_load(key, config_.cache_dir)) {
                return *cached;
            }
        }
        return complete_live(resolved, key);
    }
    }
    throw Error(ErrorKind::internal, "unknown backend kind");
}

ChatResponse complete(const ChatRequest& request, const BackendConfig& backend) {
    return Gateway(backend).complete(request);
}

} // namespace pace
