#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/function_call.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/mcp_client.hpp"
#include "mcpflow/registry.hpp"
#include "mcpflow/synthesis.hpp"

namespace mcpflow {

// ---------------------------------------------------------------------------
// Web-agent loop
// ---------------------------------------------------------------------------

enum class AgentOutcome { success, max_turns, tool_failure };

inline std::string to_string(AgentOutcome o) {
    switch (o) {
        case AgentOutcome::success: return "success";
        case AgentOutcome::max_turns: return "max_turns";
        case AgentOutcome::tool_failure: return "tool_failure";
    }
    return "max_turns";
}

struct AgentTurn {
    std::string assistant_text;
    std::optional<FunctionCall> request;  // tool call the assistant asked for
    std::optional<std::string> tool_output;
};

struct AgentTranscript {
    std::vector<AgentTurn> turns;
    Usage usage;
    AgentOutcome outcome = AgentOutcome::max_turns;
    std::string final_answer;

    json to_json() const {
        json ts = json::array();
        for (const auto& t : turns) {
            json o{{"assistant_text", t.assistant_text}};
            if (t.request) o["request"] = t.request->to_json();
            if (t.tool_output) o["tool_output"] = *t.tool_output;
            ts.push_back(std::move(o));
        }
        return json{{"turns", ts}, {"outcome", ::mcpflow::to_string(outcome)},
                    {"final_answer", final_answer}, {"usage", usage.to_json()}};
    }
};

inline constexpr int kDefaultMaxTurns = 12;

// Extracts a tool request of the form {"tool": name, "arguments": {...}}
// from the assistant reply (fenced block first, then any embedded object).
inline std::optional<FunctionCall> parse_tool_request(const std::string& text) {
    auto j = detail::extract_json(text);
    if (!j || !j->is_object()) return std::nullopt;
    std::string name = j->value("tool", j->value("name", ""));
    if (name.empty()) return std::nullopt;
    FunctionCall c;
    c.name = name;
    json args = j->value("arguments", json::object());
    c.arguments = args.is_object() ? args : json::object();
    return c;
}

struct AgentContext {
    ChatProvider* llm = nullptr;
    ModelSpec model;
    Session* tools = nullptr;  // browsing tools exposed over MCP
    int max_turns = kDefaultMaxTurns;
    std::string system_prompt =
        "You are a web research agent. You may call the available tools by replying with a "
        "fenced JSON block of the form {\"tool\": \"<name>\", \"arguments\": {...}}. When you "
        "have gathered what the task asks for, reply with the final result and no tool block.";
};

// Iterates chat -> tool call -> observation until the model stops requesting
// tools, the turn budget runs out, or tools fail twice in a row.
inline AgentTranscript agent_loop(const std::string& goal, AgentContext& ctx) {
    AgentTranscript tr;
    std::vector<ChatMessage> messages{ChatMessage::system(ctx.system_prompt),
                                      ChatMessage::user(goal)};
    int consecutive_failures = 0;
    for (int turn = 0; turn < ctx.max_turns; ++turn) {
        ChatResult r = ctx.llm->chat(ctx.model, messages, {});
        tr.usage += r.usage;
        AgentTurn t;
        t.assistant_text = r.text;
        t.request = parse_tool_request(r.text);
        if (!t.request) {
            tr.final_answer = detail::trim(r.text);
            tr.turns.push_back(std::move(t));
            tr.outcome = AgentOutcome::success;
            return tr;
        }
        messages.push_back(ChatMessage::assistant(r.text));
        std::string observation;
        try {
            ToolResult result = ctx.tools->call_tool(t.request->name, t.request->arguments);
            observation = result.text();
            if (result.is_error) observation = "tool error: " + observation;
            consecutive_failures = 0;
        } catch (const ClientError& e) {
            observation = std::string("transport failure: ") + e.what();
            if (++consecutive_failures >= 2) {
                t.tool_output = observation;
                tr.turns.push_back(std::move(t));
                tr.outcome = AgentOutcome::tool_failure;
                return tr;
            }
        }
        t.tool_output = observation;
        messages.push_back(ChatMessage::tool(t.request->name, observation));
        tr.turns.push_back(std::move(t));
    }
    tr.outcome = AgentOutcome::max_turns;
    return tr;
}

// ---------------------------------------------------------------------------
// Harvest tasks
// ---------------------------------------------------------------------------

struct ServerListing {
    std::string name;
    std::string description;
    std::string detail_url;
};

struct HarvestPrompts {
    std::string list_collection;     // {url} {page}
    std::string config_extraction;   // {url} {page} {mcp_name}
};

struct ListingsResult {
    std::vector<ServerListing> listings;
    AgentTranscript transcript;
};

// Asks the agent to enumerate one marketplace page and parses its final
// JSON answer into listings. Listings without a name are skipped.
inline ListingsResult collect_listings(const std::string& marketplace_url, int page,
                                       AgentContext& ctx, const HarvestPrompts& prompts) {
    std::string goal = render_template(prompts.list_collection,
                                       {{"{url}", marketplace_url},
                                        {"{page}", std::to_string(page)}});
    ListingsResult out;
    out.transcript = agent_loop(goal, ctx);
    if (out.transcript.outcome != AgentOutcome::success) return out;
    auto j = detail::extract_json(out.transcript.final_answer);
    if (!j) return out;
    const json items = j->is_array() ? *j : j->value("servers", json::array());
    for (const auto& item : items) {
        if (!item.is_object()) continue;
        ServerListing l;
        l.name = item.value("name", "");
        if (l.name.empty()) continue;
        l.description = item.value("description", "");
        l.detail_url = item.value("url", item.value("detail_url", ""));
        out.listings.push_back(std::move(l));
    }
    return out;
}

struct ConfigResult {
    std::optional<LaunchSpec> launch;
    AgentTranscript transcript;
};

// Drives the agent to a server's detail page and pulls the launch config
// out of its final answer. A page without a config yields an empty result,
// not an error.
inline ConfigResult extract_config(const ServerListing& listing, AgentContext& ctx,
                                   const HarvestPrompts& prompts) {
    std::string goal = render_template(prompts.config_extraction,
                                       {{"{url}", listing.detail_url},
                                        {"{page}", listing.detail_url},
                                        {"{mcp_name}", listing.name}});
    ConfigResult out;
    out.transcript = agent_loop(goal, ctx);
    if (out.transcript.outcome != AgentOutcome::success) return out;
    auto j = detail::extract_json(out.transcript.final_answer);
    if (!j || !j->is_object()) return out;
    json cfg = *j;
    if (cfg.contains("mcpServers") && cfg["mcpServers"].is_object() &&
        !cfg["mcpServers"].empty()) {
        const json entry = cfg["mcpServers"].begin().value();
        LaunchSpec launch;
        if (entry.contains("url")) {
            launch.transport = Transport::sse;
            launch.url = entry["url"].get<std::string>();
        } else {
            launch.transport = Transport::stdio;
            launch.command = entry.value("command", "");
            for (const auto& a : entry.value("args", json::array()))
                launch.args.push_back(a.get<std::string>());
            const json env = entry.value("env", json::object());
            for (auto it = env.begin(); it != env.end(); ++it)
                launch.env[it.key()] = it.value().is_string() ? it.value().get<std::string>()
                                                              : it.value().dump();
        }
        try {
            launch.validate();
            out.launch = std::move(launch);
        } catch (const std::exception&) {
            // malformed config: treat as absent
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Crawl accounting
// ---------------------------------------------------------------------------

struct CrawlAttempt {
    std::string server_name;
    bool success = false;
    double input_tokens = 0.0;
    double output_tokens = 0.0;
    double wall_time = 0.0;
    double cost = 0.0;
};

struct CrawlReport {
    std::vector<CrawlAttempt> attempts;
    size_t skipped_known = 0;
    size_t skipped_duplicate_fingerprint = 0;

    size_t successes() const {
        size_t n = 0;
        for (const auto& a : attempts) n += a.success;
        return n;
    }
    size_t failures() const { return attempts.size() - successes(); }

    // Means are taken over successful attempts only; failed attempts are
    // counted but excluded from the averages.
    double mean_over_successes(double CrawlAttempt::* field) const {
        double total = 0.0;
        size_t n = 0;
        for (const auto& a : attempts)
            if (a.success) { total += a.*field; ++n; }
        return n ? total / double(n) : 0.0;
    }
    double mean_input_tokens() const { return mean_over_successes(&CrawlAttempt::input_tokens); }
    double mean_output_tokens() const { return mean_over_successes(&CrawlAttempt::output_tokens); }
    double mean_wall_time() const { return mean_over_successes(&CrawlAttempt::wall_time); }
    double mean_cost() const { return mean_over_successes(&CrawlAttempt::cost); }

    // Measured projection alongside the optimistic published estimate; the
    // two disagree by an order of magnitude, so both are surfaced.
    double projected_cost_per_100() const { return 100.0 * mean_cost(); }
    static constexpr double kOptimisticCostPer100 = 2.0;

    json to_json() const {
        return json{{"attempts", attempts.size()},
                    {"successes", successes()},
                    {"failures", failures()},
                    {"skipped_known", skipped_known},
                    {"skipped_duplicate_fingerprint", skipped_duplicate_fingerprint},
                    {"mean_input_tokens", mean_input_tokens()},
                    {"mean_output_tokens", mean_output_tokens()},
                    {"mean_wall_time", mean_wall_time()},
                    {"mean_cost", mean_cost()},
                    {"projected_cost_per_100", projected_cost_per_100()},
                    {"optimistic_cost_per_100", kOptimisticCostPer100}};
    }
};

// ---------------------------------------------------------------------------
// Incremental crawl
// ---------------------------------------------------------------------------

struct CrawlResult {
    std::vector<ServerRecord> new_records;
    CrawlReport report;
};

// Crawls marketplace pages, skipping servers already known by
// (marketplace, name) alias; freshly extracted servers whose fingerprint is
// already in the catalog are skipped too.
inline CrawlResult incremental_crawl(const Catalog& catalog, Marketplace marketplace,
                                     const std::string& marketplace_url, int pages,
                                     AgentContext& ctx, const HarvestPrompts& prompts) {
    std::set<std::string> known_names;
    std::set<std::string> known_fingerprints;
    for (const auto& [id, rec] : catalog.records) {
        if (rec.marketplace == marketplace) known_names.insert(rec.name);
        for (const auto& alias : rec.aliases)
            if (alias.marketplace == marketplace) known_names.insert(alias.name);
        if (!rec.tools.empty()) known_fingerprints.insert(fingerprint(rec.tools));
    }

    CrawlResult out;
    for (int page = 1; page <= pages; ++page) {
        ListingsResult lr = collect_listings(marketplace_url, page, ctx, prompts);
        for (const auto& listing : lr.listings) {
            if (known_names.count(listing.name)) {
                ++out.report.skipped_known;
                continue;
            }
            CrawlAttempt attempt;
            attempt.server_name = listing.name;
            ConfigResult cr = extract_config(listing, ctx, prompts);
            attempt.input_tokens = cr.transcript.usage.input_tokens;
            attempt.output_tokens = cr.transcript.usage.output_tokens;
            attempt.wall_time = cr.transcript.usage.wall_time;
            attempt.cost = cr.transcript.usage.cost;
            attempt.success =
                cr.transcript.outcome == AgentOutcome::success && cr.launch.has_value();
            out.report.attempts.push_back(attempt);
            if (!attempt.success) continue;

            ServerRecord rec;
            rec.name = listing.name;
            rec.marketplace = marketplace;
            rec.description = listing.description;
            rec.detail_url = listing.detail_url;
            rec.launch = cr.launch;
            rec.aliases = {{marketplace, listing.name}};
            rec.id = record_id(rec);
            known_names.insert(listing.name);
            out.new_records.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace mcpflow
