#pragma once

#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/detail/rng.hpp"
#include "mcpflow/function_call.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/mcp_client.hpp"
#include "mcpflow/registry.hpp"

namespace mcpflow {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class DraftStage { raw, slot_filled, scrubbed, evolved };

inline std::string to_string(DraftStage s) {
    switch (s) {
        case DraftStage::raw: return "raw";
        case DraftStage::slot_filled: return "slot_filled";
        case DraftStage::scrubbed: return "scrubbed";
        case DraftStage::evolved: return "evolved";
    }
    return "raw";
}

struct LineageEntry {
    std::string stage;       // stage reached, or an annotation such as "evolve:concretize"
    std::string prior_text;
    std::string note;        // prompt digest, replacement log, flags
};

struct InstructionDraft {
    std::string server_id;
    std::string tool_name;
    std::string text;
    DraftStage stage = DraftStage::raw;
    std::vector<LineageEntry> lineage;
    uint64_t seed = 0;
    bool flagged = false;   // post-check or scrub failure; filtration decides
    std::string flag_reason;
};

struct EnvContext {
    std::map<std::string, std::vector<std::string>> file_pool;  // extension -> paths
    std::vector<std::string> url_pool;
    std::string workspace_dir;

    static EnvContext from_json(const json& j) {
        EnvContext e;
        for (auto it = j.value("file_pool", json::object()).begin();
             it != j.value("file_pool", json::object()).end(); ++it)
            for (const auto& p : it.value()) e.file_pool[it.key()].push_back(p.get<std::string>());
        for (const auto& u : j.value("url_pool", json::array()))
            e.url_pool.push_back(u.get<std::string>());
        e.workspace_dir = j.value("workspace_dir", "");
        return e;
    }

    // Fixed-order rendering keeps cassette keys stable.
    std::string render() const {
        std::string out = "workspace_dir: " + workspace_dir + "\n";
        for (const auto& [ext, files] : file_pool) {
            out += "files (" + ext + "):";
            for (const auto& f : files) out += " " + f;
            out += "\n";
        }
        out += "urls:";
        for (const auto& u : url_pool) out += " " + u;
        out += "\n";
        return out;
    }
};

struct Sample {
    std::string id;
    std::string instruction;
    std::string server_id;
    ToolSpec gt_tool;
    FunctionCall gt_call;
    Marketplace marketplace = Marketplace::Manual;
    std::map<std::string, json> filter_verdicts;  // stage -> verdict json
    std::vector<LineageEntry> lineage;
    uint64_t seed = 0;

    static Sample make(std::string id, std::string instruction, std::string server_id,
                       ToolSpec gt_tool, FunctionCall gt_call, Marketplace marketplace,
                       uint64_t seed) {
        if (gt_call.name != gt_tool.name)
            throw std::invalid_argument("sample: gt_call.name must equal gt_tool.name");
        Sample s;
        s.id = std::move(id);
        s.instruction = std::move(instruction);
        s.server_id = std::move(server_id);
        s.gt_tool = std::move(gt_tool);
        s.gt_call = std::move(gt_call);
        s.marketplace = marketplace;
        s.seed = seed;
        return s;
    }

    json to_json() const {
        json verdicts = json::object();
        for (const auto& [stage, v] : filter_verdicts) verdicts[stage] = v;
        json lin = json::array();
        for (const auto& l : lineage)
            lin.push_back({{"stage", l.stage}, {"prior_text", l.prior_text}, {"note", l.note}});
        return json{{"schema_version", 1},
                    {"id", id},
                    {"instruction", instruction},
                    {"server_id", server_id},
                    {"gt_tool", ::mcpflow::to_json(gt_tool)},
                    {"gt_call", gt_call.to_json()},
                    {"marketplace", ::mcpflow::to_string(marketplace)},
                    {"filter_verdicts", verdicts},
                    {"lineage", lin},
                    {"seed", seed}};
    }

    static Sample from_json(const json& j) {
        Sample s;
        s.id = j.at("id").get<std::string>();
        s.instruction = j.at("instruction").get<std::string>();
        s.server_id = j.at("server_id").get<std::string>();
        s.gt_tool = tool_from_json(j.at("gt_tool"));
        s.gt_call = FunctionCall::from_json(j.at("gt_call"));
        s.marketplace = parse_marketplace(j.at("marketplace").get<std::string>());
        for (auto it = j.value("filter_verdicts", json::object()).begin();
             it != j.value("filter_verdicts", json::object()).end(); ++it)
            s.filter_verdicts[it.key()] = it.value();
        for (const auto& l : j.value("lineage", json::array()))
            s.lineage.push_back({l.value("stage", ""), l.value("prior_text", ""),
                                 l.value("note", "")});
        s.seed = j.value("seed", 0ULL);
        return s;
    }
};

enum class TrajectoryValidity { unknown, valid, invalid };

inline std::string to_string(TrajectoryValidity v) {
    switch (v) {
        case TrajectoryValidity::unknown: return "unknown";
        case TrajectoryValidity::valid: return "valid";
        case TrajectoryValidity::invalid: return "invalid";
    }
    return "unknown";
}

// user instruction -> assistant function call -> tool response -> assistant
// summary; exactly that shape for single-call trajectories.
struct Trajectory {
    std::string sample_id;
    std::vector<ChatMessage> messages;
    ToolResult tool_result;
    TrajectoryValidity valid = TrajectoryValidity::unknown;

    json to_json() const {
        json msgs = json::array();
        for (const auto& m : messages) {
            json o{{"role", ::mcpflow::to_string(m.role)}, {"content", m.content}};
            if (!m.tool_name.empty()) o["tool_name"] = m.tool_name;
            msgs.push_back(std::move(o));
        }
        return json{{"schema_version", 1},
                    {"sample_id", sample_id},
                    {"messages", msgs},
                    {"is_error", tool_result.is_error},
                    {"transport_failure", tool_result.transport_failure},
                    {"raw", tool_result.raw},
                    {"valid", ::mcpflow::to_string(valid)}};
    }
};

// ---------------------------------------------------------------------------
// Prompt assets
// ---------------------------------------------------------------------------

struct SynthesisPrompts {
    std::string instruction_generation;  // {mcp_name} {mcp_description} {tool_name}
                                         // {tool_description} {tool_schema} {number} {example}
    std::string slot_fill;               // ... {query} {environment context}
    std::string evolution;               // {} filled with the sampled direction
    std::string function_call;           // invented plumbing: formalize the call
    std::string summarizer;              // invented plumbing: summarize tool output
};

inline std::string render_template(std::string tpl,
                                   const std::vector<std::pair<std::string, std::string>>& subs) {
    for (const auto& [key, value] : subs) {
        size_t pos;
        while ((pos = tpl.find(key)) != std::string::npos) tpl.replace(pos, key.size(), value);
    }
    return tpl;
}

struct SynthesisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Stage 1: few-shot instruction generation
// ---------------------------------------------------------------------------

struct GenerationBatch {
    std::vector<InstructionDraft> drafts;
    bool partial = false;  // fewer than the requested count parsed
};

// Parses the [Instruction1]..[InstructionN] markers out of the reply.
// Partial batches are kept and flagged; zero markers is a parse failure.
inline GenerationBatch generate_instructions(const ServerRecord& server, const ToolSpec& tool,
                                             ChatProvider& llm, const ModelSpec& model,
                                             uint64_t seed, const SynthesisPrompts& prompts,
                                             const std::string& few_shot_example,
                                             int count = 5) {
    std::string prompt = render_template(
        prompts.instruction_generation,
        {{"{mcp_name}", server.name},
         {"{mcp_description}", server.description},
         {"{tool_name}", tool.name},
         {"{tool_description}", tool.description},
         {"{tool_schema}", tool.input_schema.dump()},
         {"{number}", "1"},
         {"{example}", few_shot_example}});
    ChatResult r = llm.chat(model, {ChatMessage::user(prompt)}, {});

    GenerationBatch batch;
    std::string prompt_digest = detail::sha256_hex(prompt);
    for (int i = 1; i <= count; ++i) {
        std::string marker = "[Instruction" + std::to_string(i) + "]";
        size_t pos = r.text.find(marker);
        if (pos == std::string::npos) continue;
        size_t start = pos + marker.size();
        size_t end = r.text.find("[Instruction", start);
        std::string text = detail::trim(r.text.substr(start, end - start));
        if (text.empty()) continue;
        InstructionDraft d;
        d.server_id = server.id;
        d.tool_name = tool.name;
        d.text = text;
        d.stage = DraftStage::raw;
        d.seed = detail::derive_seed(seed, server.id + "/" + tool.name + "/" + std::to_string(i));
        d.lineage.push_back({"raw", "", prompt_digest});
        batch.drafts.push_back(std::move(d));
    }
    if (batch.drafts.empty())
        throw SynthesisError("instruction generation: no [InstructionN] markers in reply for tool " +
                             tool.name);
    batch.partial = int(batch.drafts.size()) < count;
    return batch;
}

// Drafts that leak the tool name verbatim are flagged for the similarity
// filter, not dropped here.
inline bool leaks_tool_name(const InstructionDraft& draft, const ToolSpec& tool) {
    return detail::to_lower(draft.text).find(detail::to_lower(tool.name)) != std::string::npos;
}

// ---------------------------------------------------------------------------
// Stage 2a: slot-fill revision
// ---------------------------------------------------------------------------

inline InstructionDraft slot_fill(const InstructionDraft& draft, const ServerRecord& server,
                                  const ToolSpec& tool, const EnvContext& env, ChatProvider& llm,
                                  const ModelSpec& model, const SynthesisPrompts& prompts) {
    if (draft.stage != DraftStage::raw)
        throw SynthesisError("slot_fill: draft must be at stage raw");
    InstructionDraft out = draft;
    auto required = tool.required_params();
    if (required.empty()) {
        out.stage = DraftStage::slot_filled;
        out.lineage.push_back({"slot_filled", draft.text, "no required slots"});
        return out;
    }
    std::string prompt = render_template(
        prompts.slot_fill, {{"{mcp_name}", server.name},
                            {"{mcp_description}", server.description},
                            {"{tool_name}", tool.name},
                            {"{tool_description}", tool.description},
                            {"{tool_schema}", tool.input_schema.dump()},
                            {"{query}", draft.text},
                            {"{environment context}", env.render()}});
    ChatResult r = llm.chat(model, {ChatMessage::user(prompt)}, {});
    std::string revised = detail::trim(r.text);
    out.stage = DraftStage::slot_filled;
    out.lineage.push_back({"slot_filled", draft.text, detail::sha256_hex(prompt)});
    if (revised.empty()) {
        out.flagged = true;
        out.flag_reason = "slot_fill: empty revision";
        return out;
    }
    out.text = revised;
    // Post-check: if the revision left the text untouched while a required
    // slot name never appears, the slot was likely not filled.
    if (revised == draft.text) {
        for (const auto& slot : required) {
            if (detail::to_lower(revised).find(detail::to_lower(slot)) == std::string::npos) {
                out.flagged = true;
                out.flag_reason = "slot_fill: required slot '" + slot + "' still textually absent";
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 2b: placeholder scrubbing
// ---------------------------------------------------------------------------

// Concrete regex sets for the three placeholder classes. File patterns must
// expose the extension as their last capture group.
struct PlaceholderPatterns {
    std::vector<std::string> file_patterns;
    std::vector<std::string> url_patterns;
    std::vector<std::string> dir_patterns;

    static PlaceholderPatterns from_json(const json& j) {
        PlaceholderPatterns p;
        for (const auto& r : j.value("file", json::array())) p.file_patterns.push_back(r.get<std::string>());
        for (const auto& r : j.value("url", json::array())) p.url_patterns.push_back(r.get<std::string>());
        for (const auto& r : j.value("dir", json::array())) p.dir_patterns.push_back(r.get<std::string>());
        return p;
    }

    static PlaceholderPatterns defaults() {
        PlaceholderPatterns p;
        p.file_patterns = {
            R"(/path/to/[A-Za-z0-9_./-]*?\.([A-Za-z0-9]{1,6})\b)",
            R"(<[A-Za-z0-9 _-]+\.([A-Za-z0-9]{1,6})>)",
            R"(\[[A-Za-z0-9 _-]+\.([A-Za-z0-9]{1,6})\])",
            R"(\bexample\.(pdf|txt|csv|json|md|png|jpg|docx|xlsx)\b)",
        };
        p.url_patterns = {
            R"(https?://(?:www\.)?example\.(?:com|org|net)[A-Za-z0-9_./?=&%-]*)",
        };
        p.dir_patterns = {
            R"(/path/to/[A-Za-z0-9_-]+(?=[\s"'.,;:!?)]|$))",
            R"(<[A-Za-z0-9 _-]*(?:directory|folder|dir)>)",
        };
        return p;
    }
};

// Replaces file placeholders with a pool file of the same extension, URL
// placeholders with a pool URL, directory placeholders with the workspace
// directory. Only matched spans change; replacements are logged in lineage.
inline InstructionDraft placeholder_scrub(const InstructionDraft& draft, const EnvContext& env,
                                          const PlaceholderPatterns& patterns =
                                              PlaceholderPatterns::defaults()) {
    if (draft.stage != DraftStage::slot_filled)
        throw SynthesisError("placeholder_scrub: draft must be at stage slot_filled");
    InstructionDraft out = draft;
    std::string text = draft.text;
    std::vector<std::string> log;
    detail::Rng rng(detail::derive_seed(draft.seed, "scrub"));
    bool failure = false;

    auto replace_all = [&](const std::string& pattern,
                           const std::function<std::optional<std::string>(const std::smatch&)>&
                               make_replacement) {
        std::regex re(pattern);
        std::string result;
        std::string remaining = text;
        std::smatch m;
        while (std::regex_search(remaining, m, re)) {
            result += m.prefix().str();
            auto repl = make_replacement(m);
            if (repl) {
                result += *repl;
                log.push_back(m.str() + " -> " + *repl);
            } else {
                result += m.str();
                failure = true;
                log.push_back(m.str() + " -> POOL EXHAUSTED");
            }
            remaining = m.suffix().str();
        }
        result += remaining;
        text = std::move(result);
    };

    for (const auto& pat : patterns.file_patterns) {
        replace_all(pat, [&](const std::smatch& m) -> std::optional<std::string> {
            std::string ext = detail::to_lower(m[m.size() - 1].str());
            auto it = env.file_pool.find(ext);
            if (it == env.file_pool.end() || it->second.empty()) return std::nullopt;
            std::string file = it->second[size_t(rng.below(it->second.size()))];
            if (!file.empty() && file.front() != '/')
                file = env.workspace_dir + "/" + file;
            return file;
        });
    }
    for (const auto& pat : patterns.url_patterns) {
        replace_all(pat, [&](const std::smatch&) -> std::optional<std::string> {
            if (env.url_pool.empty()) return std::nullopt;
            return env.url_pool[size_t(rng.below(env.url_pool.size()))];
        });
    }
    for (const auto& pat : patterns.dir_patterns) {
        replace_all(pat, [&](const std::smatch&) -> std::optional<std::string> {
            if (env.workspace_dir.empty()) return std::nullopt;
            return env.workspace_dir;
        });
    }

    out.text = text;
    out.stage = DraftStage::scrubbed;
    std::string note;
    for (const auto& l : log) note += (note.empty() ? "" : "; ") + l;
    out.lineage.push_back({"scrubbed", draft.text, note.empty() ? "no placeholders" : note});
    if (failure) {
        out.flagged = true;
        out.flag_reason = "placeholder_scrub: pool exhausted";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 3: evolution
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& evolution_directions() {
    static const std::vector<std::pair<std::string, std::string>> dirs = {
        {"add_constraints",
         "Please add one more constraint/requirement into #The Given Prompt#."},
        {"deepen_reasoning",
         "If #The Given Prompt# can be solved with just a few simple thinking processes, you can "
         "rewrite it to explicitly request multiple-step reasoning."},
        {"concretize", "Please replace general concepts with more specific concepts."},
        {"complicate_input",
         "If #The Given Prompt# contains inquiries about certain issues, the depth and breadth of "
         "the inquiry can be increased."},
    };
    return dirs;
}

// depth sequential rewrites; each step samples a direction uniformly by
// seed. A provider failure mid-chain keeps the last successful text.
inline InstructionDraft evolve(const InstructionDraft& draft, ChatProvider& llm,
                               const ModelSpec& model, const SynthesisPrompts& prompts,
                               int depth = 2, std::optional<uint64_t> seed = std::nullopt) {
    if (draft.stage != DraftStage::scrubbed)
        throw SynthesisError("evolve: draft must be at stage scrubbed");
    InstructionDraft out = draft;
    detail::Rng rng(detail::derive_seed(seed.value_or(draft.seed), "evolve"));
    for (int step = 0; step < depth; ++step) {
        const auto& [name, method] =
            evolution_directions()[size_t(rng.below(evolution_directions().size()))];
        std::string system = render_template(prompts.evolution, {{"{}", method}});
        std::string user = "#The Given Prompt#:\n" + out.text + "\n\n#Rewritten Prompt#:";
        try {
            ChatResult r = llm.chat(model, {ChatMessage::system(system), ChatMessage::user(user)},
                                    {});
            std::string rewritten = detail::trim(r.text);
            if (rewritten.empty()) break;
            out.lineage.push_back({"evolve:" + name, out.text, detail::sha256_hex(system + user)});
            out.text = rewritten;
        } catch (const ProviderError&) {
            break;  // keep last successful stage
        }
    }
    out.stage = DraftStage::evolved;
    return out;
}

// ---------------------------------------------------------------------------
// Stage 4: function-call generation
// ---------------------------------------------------------------------------

struct GeneratedCall {
    FunctionCall call;
    bool schema_ok = true;
    std::vector<std::string> violations;  // recorded for filtration, not fixed
};

inline bool detail_eval_type_ok(const json& value, const json& prop) {
    if (!prop.is_object() || !prop.contains("type") || !prop["type"].is_string()) return true;
    std::string t = prop["type"].get<std::string>();
    if (t == "string") return value.is_string();
    if (t == "integer") return value.is_number_integer() || value.is_number_unsigned();
    if (t == "number") return value.is_number();
    if (t == "boolean") return value.is_boolean();
    if (t == "array") return value.is_array();
    if (t == "object") return value.is_object();
    if (t == "null") return value.is_null();
    return true;
}

inline std::vector<std::string> check_call_against_schema(const FunctionCall& call,
                                                          const ToolSpec& tool) {
    std::vector<std::string> violations;
    const json props = tool.input_schema.value("properties", json::object());
    for (const auto& req : tool.input_schema.value("required", json::array()))
        if (!call.arguments.contains(req.get<std::string>()))
            violations.push_back("missing required argument: " + req.get<std::string>());
    for (auto it = call.arguments.begin(); it != call.arguments.end(); ++it) {
        if (!props.contains(it.key())) {
            violations.push_back("argument not in schema: " + it.key());
            continue;
        }
        if (!detail_eval_type_ok(it.value(), props[it.key()]))
            violations.push_back("argument type mismatch: " + it.key());
    }
    return violations;
}

inline GeneratedCall generate_function_call(const InstructionDraft& draft, const ToolSpec& tool,
                                            ChatProvider& llm, const ModelSpec& model,
                                            const SynthesisPrompts& prompts) {
    std::string prompt = render_template(prompts.function_call,
                                         {{"{tool_name}", tool.name},
                                          {"{tool_description}", tool.description},
                                          {"{tool_schema}", tool.input_schema.dump()},
                                          {"{query}", draft.text}});
    ChatResult r = llm.chat(model, {ChatMessage::user(prompt)}, {});
    auto parsed = detail::extract_json(r.text);
    if (!parsed || !parsed->is_object())
        throw SynthesisError("function-call generation: unparseable reply for tool " + tool.name);
    GeneratedCall out;
    json j = *parsed;
    out.call.name = j.value("name", tool.name);
    if (out.call.name != tool.name) out.call.name = tool.name;  // coerce; gt tool is fixed
    json args = j.value("arguments", j.value("args", json::object()));
    out.call.arguments = args.is_object() ? args : json::object();
    out.violations = check_call_against_schema(out.call, tool);
    out.schema_ok = out.violations.empty();
    return out;
}

// ---------------------------------------------------------------------------
// Stage 5: trajectory collection
// ---------------------------------------------------------------------------

inline Trajectory collect_trajectory(const Sample& sample, Session& session, ChatProvider& llm,
                                     const ModelSpec& summarizer_model,
                                     const SynthesisPrompts& prompts) {
    Trajectory t;
    t.sample_id = sample.id;
    t.messages.push_back(ChatMessage::user(sample.instruction));
    t.messages.push_back(ChatMessage::assistant(sample.gt_call.to_json().dump()));

    ToolResult result;
    try {
        result = session.call_tool(sample.gt_call.name, sample.gt_call.arguments);
    } catch (const ClientError& e) {
        result.transport_failure = true;
        result.is_error = true;
        result.raw = json{{"transport_error", e.what()}};
        result.content = {{ContentKind::text, std::string("transport failure: ") + e.what()}};
    }
    t.tool_result = result;
    t.messages.push_back(ChatMessage::tool(sample.gt_call.name, result.text()));

    std::string summary;
    try {
        std::string prompt = render_template(prompts.summarizer, {{"{query}", sample.instruction},
                                                                  {"{response}", result.text()}});
        ChatResult r = llm.chat(summarizer_model, {ChatMessage::user(prompt)}, {});
        summary = detail::trim(r.text);
    } catch (const ProviderError&) {
        summary = "";
    }
    t.messages.push_back(ChatMessage::assistant(summary));
    t.valid = TrajectoryValidity::unknown;
    return t;
}

}  // namespace mcpflow
