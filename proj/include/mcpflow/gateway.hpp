#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/detail/rng.hpp"
#include "mcpflow/detail/sha256.hpp"

namespace mcpflow {

using detail::json;

// ---------------------------------------------------------------------------
// Chat / embedding domain types
// ---------------------------------------------------------------------------

enum class Role { system, user, assistant, tool };

inline std::string to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
        case Role::tool: return "tool";
    }
    return "user";
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;
    std::string tool_name;  // role == tool only

    static ChatMessage system(std::string text) { return {Role::system, std::move(text), {}}; }
    static ChatMessage user(std::string text) { return {Role::user, std::move(text), {}}; }
    static ChatMessage assistant(std::string text) { return {Role::assistant, std::move(text), {}}; }
    static ChatMessage tool(std::string name, std::string text) {
        return {Role::tool, std::move(text), std::move(name)};
    }
};

struct ModelSpec {
    std::string model_id;
    double input_price = 0.0;   // currency per 1e6 input tokens
    double output_price = 0.0;  // currency per 1e6 output tokens
};

struct ChatParams {
    double temperature = 0.7;
    double top_p = 0.8;
    int max_tokens = 4096;
};

struct Usage {
    double input_tokens = 0.0;
    double output_tokens = 0.0;
    double wall_time = 0.0;  // seconds
    double cost = 0.0;
    bool estimated = false;  // token counts fell back to the whitespace estimate

    Usage& operator+=(const Usage& o) {
        input_tokens += o.input_tokens;
        output_tokens += o.output_tokens;
        wall_time += o.wall_time;
        cost += o.cost;
        estimated = estimated || o.estimated;
        return *this;
    }

    json to_json() const {
        return json{{"input_tokens", input_tokens}, {"output_tokens", output_tokens},
                    {"wall_time", wall_time}, {"cost", cost}, {"estimated", estimated}};
    }
};

inline double usage_cost(const ModelSpec& model, double input_tokens, double output_tokens) {
    return input_tokens * model.input_price / 1e6 + output_tokens * model.output_price / 1e6;
}

// Component-wise sum over usages.
inline Usage account(const std::vector<Usage>& usages) {
    Usage total;
    for (const auto& u : usages) total += u;
    return total;
}

inline Usage mean_usage(const std::vector<Usage>& usages) {
    Usage m = account(usages);
    if (usages.empty()) return m;
    double n = double(usages.size());
    m.input_tokens /= n;
    m.output_tokens /= n;
    m.wall_time /= n;
    m.cost /= n;
    return m;
}

struct EmbeddingVector {
    std::vector<double> values;  // unit L2 norm once it leaves the gateway
};

inline void normalize(EmbeddingVector& v) {
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v.values) x /= norm;
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        throw std::invalid_argument("cosine: dimension mismatch");
    double dot = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    return dot;  // inputs are unit-norm
}

// Whitespace token estimate used when a provider omits usage.
inline double estimate_tokens(std::string_view text) {
    double count = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

// ---------------------------------------------------------------------------
// Provider interfaces and errors
// ---------------------------------------------------------------------------

struct ProviderError : std::runtime_error {
    bool retryable;
    explicit ProviderError(const std::string& what, bool retryable_ = false)
        : std::runtime_error(what), retryable(retryable_) {}
};

struct ChatResult {
    std::string text;
    Usage usage;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual ChatResult chat(const ModelSpec& model, const std::vector<ChatMessage>& messages,
                            const ChatParams& params) = 0;
};

class EmbedProvider {
public:
    virtual ~EmbedProvider() = default;
    virtual size_t dimension() const = 0;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

inline json messages_to_json(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const auto& m : messages) {
        json o{{"role", to_string(m.role)}, {"content", m.content}};
        if (!m.tool_name.empty()) o["tool_name"] = m.tool_name;
        arr.push_back(std::move(o));
    }
    return arr;
}

// Content address of a chat request; cassettes and checkpoints key on this.
inline std::string chat_request_digest(const ModelSpec& model,
                                       const std::vector<ChatMessage>& messages,
                                       const ChatParams& params) {
    json req{{"model_id", model.model_id},
             {"messages", messages_to_json(messages)},
             {"params",
              {{"temperature", params.temperature},
               {"top_p", params.top_p},
               {"max_tokens", params.max_tokens}}}};
    return detail::sha256_hex(req.dump());
}

// ---------------------------------------------------------------------------
// Retry policy
// ---------------------------------------------------------------------------

struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_seconds = 1.0;
    double factor = 2.0;
    // Injectable for tests; defaults to a real sleep.
    std::function<void(double)> sleeper = [](double s) {
        std::this_thread::sleep_for(std::chrono::duration<double>(s));
    };
};

// Uniform access point: applies the retry policy around a ChatProvider and
// records the attempt count of the last call.
class Gateway : public ChatProvider {
public:
    Gateway(std::shared_ptr<ChatProvider> inner, RetryPolicy policy = {})
        : inner_(std::move(inner)), policy_(std::move(policy)) {}

    ChatResult chat(const ModelSpec& model, const std::vector<ChatMessage>& messages,
                    const ChatParams& params) override {
        if (messages.empty()) throw std::invalid_argument("chat: empty message list");
        if (messages.front().role != Role::system && messages.front().role != Role::user)
            throw std::invalid_argument("chat: first message must be system or user");
        double delay = policy_.base_delay_seconds;
        for (int attempt = 1;; ++attempt) {
            last_attempts_ = attempt;
            try {
                return inner_->chat(model, messages, params);
            } catch (const ProviderError& e) {
                if (!e.retryable || attempt >= policy_.max_attempts) throw;
                policy_.sleeper(delay);
                delay *= policy_.factor;
            }
        }
    }

    int last_attempts() const { return last_attempts_; }

private:
    std::shared_ptr<ChatProvider> inner_;
    RetryPolicy policy_;
    int last_attempts_ = 0;
};

// ---------------------------------------------------------------------------
// Cassette store: content-addressed record/replay of provider exchanges
// ---------------------------------------------------------------------------

class CassetteStore {
public:
    explicit CassetteStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    bool has(const std::string& key) const {
        return std::filesystem::exists(dir_ / (key + ".json"));
    }

    json get(const std::string& key) const {
        return json::parse(detail::read_file(dir_ / (key + ".json")));
    }

    void put(const std::string& key, const json& value) {
        std::lock_guard lock(write_mutex_);
        detail::write_file(dir_ / (key + ".json"), detail::stable_dump(value));
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::mutex write_mutex_;
};

// Replays recorded chats; on a miss either forwards to a backing provider
// and records the exchange, or fails (replay-only mode for CI).
class CassetteChatProvider : public ChatProvider {
public:
    CassetteChatProvider(std::shared_ptr<CassetteStore> store,
                         std::shared_ptr<ChatProvider> backing = nullptr)
        : store_(std::move(store)), backing_(std::move(backing)) {}

    ChatResult chat(const ModelSpec& model, const std::vector<ChatMessage>& messages,
                    const ChatParams& params) override {
        std::string key = "chat-" + chat_request_digest(model, messages, params);
        if (store_->has(key)) {
            json rec = store_->get(key);
            ChatResult r;
            r.text = rec.at("text").get<std::string>();
            const json& u = rec.at("usage");
            r.usage.input_tokens = u.at("input_tokens").get<double>();
            r.usage.output_tokens = u.at("output_tokens").get<double>();
            r.usage.wall_time = u.value("wall_time", 0.0);
            r.usage.cost = u.value("cost", 0.0);
            r.usage.estimated = u.value("estimated", false);
            return r;
        }
        if (!backing_)
            throw ProviderError("cassette miss in replay-only mode: " + key, false);
        ChatResult r = backing_->chat(model, messages, params);
        json rec{{"model_id", model.model_id},
                 {"messages", messages_to_json(messages)},
                 {"text", r.text},
                 {"usage",
                  {{"input_tokens", r.usage.input_tokens},
                   {"output_tokens", r.usage.output_tokens},
                   {"wall_time", r.usage.wall_time},
                   {"cost", r.usage.cost},
                   {"estimated", r.usage.estimated}}}};
        store_->put(key, rec);
        return r;
    }

private:
    std::shared_ptr<CassetteStore> store_;
    std::shared_ptr<ChatProvider> backing_;
};

// ---------------------------------------------------------------------------
// Test / fixture providers
// ---------------------------------------------------------------------------

// Replies (or failures) consumed in order; for unit tests.
class ScriptedChatProvider : public ChatProvider {
public:
    struct Step {
        std::string reply;
        bool fail = false;
        bool retryable = true;
    };

    void push_reply(std::string text) { steps_.push_back({std::move(text), false, false}); }
    void push_failure(bool retryable = true) { steps_.push_back({"", true, retryable}); }

    ChatResult chat(const ModelSpec& model, const std::vector<ChatMessage>& messages,
                    const ChatParams&) override {
        ++calls_;
        if (steps_.empty()) throw ProviderError("scripted provider exhausted", false);
        Step s = steps_.front();
        steps_.pop_front();
        if (s.fail) throw ProviderError("scripted failure", s.retryable);
        ChatResult r;
        r.text = s.reply;
        double in_tokens = 0;
        for (const auto& m : messages) in_tokens += estimate_tokens(m.content);
        r.usage.input_tokens = in_tokens;
        r.usage.output_tokens = estimate_tokens(r.text);
        r.usage.cost = usage_cost(model, r.usage.input_tokens, r.usage.output_tokens);
        r.usage.estimated = true;
        return r;
    }

    int calls() const { return calls_; }

private:
    std::deque<Step> steps_;
    int calls_ = 0;
};

// Seeded hash-to-vector embeddings: identical text always maps to the same
// unit vector. Stands in for a real embedding model in offline runs.
class HashEmbedProvider : public EmbedProvider {
public:
    explicit HashEmbedProvider(size_t dim = 64, uint64_t seed = 0, size_t max_length = 8192)
        : dim_(dim), seed_(seed), max_length_(max_length) {}

    size_t dimension() const override { return dim_; }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            if (t.empty()) throw std::invalid_argument("embed: empty text");
            std::string text = t.size() > max_length_ ? t.substr(0, max_length_) : t;
            detail::Rng rng(detail::derive_seed(seed_, text));
            EmbeddingVector v;
            v.values.resize(dim_);
            for (double& x : v.values) x = rng.unit_real() * 2.0 - 1.0;
            normalize(v);
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    size_t dim_;
    uint64_t seed_;
    size_t max_length_;
};

// ---------------------------------------------------------------------------
// Price table {model_id: {input, output}} per 1e6 tokens
// ---------------------------------------------------------------------------

class PriceTable {
public:
    PriceTable() = default;

    static PriceTable from_json(const json& j) {
        PriceTable t;
        for (auto it = j.begin(); it != j.end(); ++it) {
            ModelSpec m;
            m.model_id = it.key();
            m.input_price = it.value().at("input").get<double>();
            m.output_price = it.value().value("output", 0.0);
            if (m.input_price < 0 || m.output_price < 0)
                throw std::invalid_argument("price table: negative price for " + m.model_id);
            t.models_[m.model_id] = m;
        }
        return t;
    }

    static PriceTable load(const std::filesystem::path& path) {
        return from_json(json::parse(detail::read_file(path)));
    }

    const ModelSpec& at(const std::string& model_id) const {
        auto it = models_.find(model_id);
        if (it == models_.end())
            throw std::out_of_range("price table: unknown model " + model_id);
        return it->second;
    }

    bool contains(const std::string& model_id) const { return models_.count(model_id) > 0; }

private:
    std::map<std::string, ModelSpec> models_;
};

}  // namespace mcpflow
