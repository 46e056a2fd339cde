#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/function_call.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/registry.hpp"

namespace mcpflow {

// ---------------------------------------------------------------------------
// Prediction parsing
// ---------------------------------------------------------------------------

namespace detail_eval {

// Reasoning preambles (<think>...</think> and friends) are stripped before
// extraction; models wrap answers in them freely.
inline std::string strip_reasoning(std::string text) {
    static const std::regex think_re("<(think|thinking|reasoning)>[\\s\\S]*?</\\1>",
                                     std::regex::icase);
    return std::regex_replace(text, think_re, "");
}

inline std::optional<FunctionCall> from_json_shape(const json& j) {
    if (!j.is_object()) return std::nullopt;
    std::string name;
    for (const char* key : {"name", "tool", "function", "tool_name"}) {
        if (j.contains(key) && j[key].is_string()) {
            name = j[key].get<std::string>();
            break;
        }
        if (j.contains(key) && j[key].is_object() && j[key].contains("name")) {
            // OpenAI-style {"function": {"name": ..., "arguments": ...}}
            return from_json_shape(j[key]);
        }
    }
    if (name.empty()) return std::nullopt;
    FunctionCall c;
    c.name = name;
    for (const char* key : {"arguments", "args", "parameters", "params"}) {
        if (!j.contains(key)) continue;
        const json& a = j[key];
        if (a.is_object()) c.arguments = a;
        else if (a.is_string()) {
            json parsed = json::parse(a.get<std::string>(), nullptr, false);
            if (parsed.is_object()) c.arguments = parsed;
        }
        break;
    }
    return c;
}

// name(arg=value, ...) call syntax as a last resort.
inline std::optional<FunctionCall> from_call_syntax(const std::string& text) {
    static const std::regex call_re("([A-Za-z_][A-Za-z0-9_.-]*)\\s*\\(([\\s\\S]*?)\\)");
    std::smatch m;
    if (!std::regex_search(text, m, call_re)) return std::nullopt;
    FunctionCall c;
    c.name = m[1];
    std::string args = m[2];
    static const std::regex kv_re("([A-Za-z_][A-Za-z0-9_]*)\\s*=\\s*(\"[^\"]*\"|'[^']*'|[^,]+)");
    for (auto it = std::sregex_iterator(args.begin(), args.end(), kv_re);
         it != std::sregex_iterator(); ++it) {
        std::string key = (*it)[1];
        std::string raw = detail::trim(std::string((*it)[2]));
        if (raw.size() >= 2 && raw.front() == '\'' && raw.back() == '\'')
            raw = "\"" + raw.substr(1, raw.size() - 2) + "\"";
        json value = json::parse(raw, nullptr, false);
        c.arguments[key] = value.is_discarded() ? json(raw) : value;
    }
    return c;
}

}  // namespace detail_eval

// Extraction order: fenced/balanced JSON object, then call syntax. Parse
// failures are outcomes, never exceptions.
inline std::optional<FunctionCall> parse_prediction(const std::string& output_text) {
    std::string text = detail_eval::strip_reasoning(output_text);
    if (auto j = detail::extract_json(text)) {
        if (auto c = detail_eval::from_json_shape(*j)) return c;
        if (j->is_array() && !j->empty()) {
            if (auto c = detail_eval::from_json_shape(j->front())) return c;
        }
    }
    return detail_eval::from_call_syntax(text);
}

// ---------------------------------------------------------------------------
// Tool / Param / AST matching
// ---------------------------------------------------------------------------

// Exact, case-sensitive: tool identifiers are machine names.
inline bool tool_match(const FunctionCall& pred, const FunctionCall& gt) {
    return pred.name == gt.name;
}

// All-or-nothing recursive parameter-name match: every ground-truth key must
// appear at the corresponding nesting level; values and extra predicted keys
// are ignored.
inline bool param_match(const json& pred_args, const json& gt_args) {
    if (!pred_args.is_object() || !gt_args.is_object()) return false;
    for (auto it = gt_args.begin(); it != gt_args.end(); ++it) {
        if (!pred_args.contains(it.key())) return false;
        if (it.value().is_object()) {
            if (!param_match(pred_args[it.key()], it.value())) return false;
        }
    }
    return true;
}

namespace detail_eval {

inline bool numbers_close(double a, double b) {
    double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
    return std::fabs(a - b) <= 1e-9 * scale;
}

// Value equality under normalization: strings trim + case-fold; numbers with
// relative tolerance (integer/real interchangeable); booleans exact; arrays
// elementwise in order; objects recursive.
inline bool values_equal(const json& pred, const json& gt) {
    if (pred.is_number() && gt.is_number())
        return numbers_close(pred.get<double>(), gt.get<double>());
    if (pred.is_string() && gt.is_string())
        return detail::to_lower(detail::trim(pred.get<std::string>())) ==
               detail::to_lower(detail::trim(gt.get<std::string>()));
    if (pred.is_boolean() && gt.is_boolean()) return pred == gt;
    if (pred.is_array() && gt.is_array()) {
        if (pred.size() != gt.size()) return false;
        for (size_t i = 0; i < pred.size(); ++i)
            if (!values_equal(pred[i], gt[i])) return false;
        return true;
    }
    if (pred.is_object() && gt.is_object()) {
        if (pred.size() != gt.size()) return false;
        for (auto it = gt.begin(); it != gt.end(); ++it) {
            if (!pred.contains(it.key())) return false;
            if (!values_equal(pred[it.key()], it.value())) return false;
        }
        return true;
    }
    if (pred.is_null() && gt.is_null()) return true;
    return false;
}

inline bool type_conforms(const json& value, const json& prop_schema) {
    if (!prop_schema.is_object() || !prop_schema.contains("type")) return true;
    if (!prop_schema["type"].is_string()) return true;
    std::string t = prop_schema["type"].get<std::string>();
    if (t == "string") return value.is_string();
    if (t == "integer") return value.is_number_integer() || value.is_number_unsigned();
    if (t == "number") return value.is_number();
    if (t == "boolean") return value.is_boolean();
    if (t == "array") return value.is_array();
    if (t == "object") return value.is_object();
    if (t == "null") return value.is_null();
    return true;  // unknown declared type: no conformance constraint
}

}  // namespace detail_eval

// Strict format correctness:
//   1. names exactly equal;
//   2. every schema-required param present in the prediction;
//   3. every predicted param exists in schema properties;
//   4. each predicted value lies in its allowed set — enum membership when an
//      enum is declared, otherwise normalized equality with the ground-truth
//      value; predicted params absent from the ground truth are checked for
//      type conformance only.
inline bool ast_match(const FunctionCall& pred, const FunctionCall& gt, const ToolSpec& schema) {
    if (pred.name != gt.name) return false;
    const json props = schema.input_schema.value("properties", json::object());
    for (const auto& req : schema.input_schema.value("required", json::array()))
        if (!pred.arguments.contains(req.get<std::string>())) return false;
    for (auto it = pred.arguments.begin(); it != pred.arguments.end(); ++it) {
        if (!props.contains(it.key())) return false;
        const json& prop = props[it.key()];
        if (!detail_eval::type_conforms(it.value(), prop)) return false;
        if (prop.is_object() && prop.contains("enum")) {
            bool member = false;
            for (const auto& candidate : prop["enum"])
                member = member || detail_eval::values_equal(it.value(), candidate);
            if (!member) return false;
        } else if (gt.arguments.contains(it.key())) {
            if (!detail_eval::values_equal(it.value(), gt.arguments[it.key()])) return false;
        }
        // predicted, schema-valid, not in gt, no enum: type conformance only
    }
    return true;
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

struct EvalOutcome {
    std::string sample_id;
    bool parse_ok = false;
    bool tool_ok = false;
    bool param_ok = false;
    bool ast_ok = false;
    std::string detail;
};

struct MetricsReport {
    size_t n = 0;
    double tool = 0.0;   // percentages
    double param = 0.0;
    double ast = 0.0;

    json to_json() const {
        return json{{"n", n}, {"Tool", tool}, {"Param", param}, {"AST", ast}};
    }
};

struct EvalRecord {
    std::string id;
    FunctionCall gt_call;
    ToolSpec gt_tool;
};

struct BatchResult {
    MetricsReport report;
    std::vector<EvalOutcome> outcomes;
};

// Missing predictions count as parse failures; an unknown prediction id is a
// caller error.
inline BatchResult evaluate_batch(const std::vector<EvalRecord>& records,
                                  const std::map<std::string, std::string>& predictions) {
    if (records.empty()) throw std::invalid_argument("evaluate_batch: empty batch");
    std::set<std::string> known;
    for (const auto& r : records) known.insert(r.id);
    for (const auto& [id, _] : predictions)
        if (!known.count(id))
            throw std::invalid_argument("evaluate_batch: prediction for unknown id " + id);

    BatchResult result;
    size_t tool_n = 0, param_n = 0, ast_n = 0;
    for (const auto& rec : records) {
        EvalOutcome o;
        o.sample_id = rec.id;
        auto pit = predictions.find(rec.id);
        std::optional<FunctionCall> pred;
        if (pit == predictions.end()) o.detail = "missing prediction";
        else pred = parse_prediction(pit->second);
        if (!pred) {
            if (o.detail.empty()) o.detail = "parse failure";
        } else {
            o.parse_ok = true;
            o.tool_ok = tool_match(*pred, rec.gt_call);
            o.param_ok = param_match(pred->arguments, rec.gt_call.arguments);
            o.ast_ok = ast_match(*pred, rec.gt_call, rec.gt_tool);
        }
        tool_n += o.tool_ok;
        param_n += o.param_ok;
        ast_n += o.ast_ok;
        result.outcomes.push_back(std::move(o));
    }
    result.report.n = records.size();
    double n = double(records.size());
    result.report.tool = 100.0 * double(tool_n) / n;
    result.report.param = 100.0 * double(param_n) / n;
    result.report.ast = 100.0 * double(ast_n) / n;
    return result;
}

// ---------------------------------------------------------------------------
// Judge-based success, step accounting
// ---------------------------------------------------------------------------

enum class SuccessVerdict { correct, incorrect, partial, deferred };

struct JudgeSuccess {
    SuccessVerdict verdict = SuccessVerdict::deferred;
    bool containment = false;  // case-folded substring check, reported for partial
};

inline JudgeSuccess judge_success(const std::string& answer, const std::string& ground_truth,
                                  ChatProvider& judge, const ModelSpec& model) {
    std::vector<ChatMessage> messages = {
        ChatMessage::system(
            "You compare an agent's final answer with the ground-truth label. Reply with exactly "
            "one word: correct, incorrect, or partial (use partial when the core content matches "
            "but the format differs)."),
        ChatMessage::user("Ground truth: " + ground_truth + "\nAnswer: " + answer)};
    JudgeSuccess out;
    out.containment = detail::to_lower(answer).find(detail::to_lower(ground_truth)) !=
                      std::string::npos;
    try {
        ChatResult r = judge.chat(model, messages, {});
        std::string v = detail::to_lower(detail::trim(r.text));
        if (v.rfind("correct", 0) == 0) out.verdict = SuccessVerdict::correct;
        else if (v.rfind("incorrect", 0) == 0) out.verdict = SuccessVerdict::incorrect;
        else if (v.rfind("partial", 0) == 0) out.verdict = SuccessVerdict::partial;
        else out.verdict = SuccessVerdict::deferred;
    } catch (const ProviderError&) {
        out.verdict = SuccessVerdict::deferred;
    }
    return out;
}

// Count of assistant-role messages: function calls, text replies, reasoning
// steps and the final answer all count.
inline size_t step_count(const std::vector<ChatMessage>& messages) {
    size_t n = 0;
    for (const auto& m : messages) n += m.role == Role::assistant;
    return n;
}

// Each assistant message weighted by its model's input-token price relative
// to the backbone model.
inline double weighted_steps(const std::vector<std::string>& per_message_model_ids,
                             const std::string& backbone_model_id, const PriceTable& prices) {
    double backbone_price = prices.at(backbone_model_id).input_price;
    if (backbone_price <= 0)
        throw std::invalid_argument("weighted_steps: backbone price must be positive");
    double ws = 0.0;
    for (const auto& id : per_message_model_ids) ws += prices.at(id).input_price / backbone_price;
    return ws;
}

// ---------------------------------------------------------------------------
// Multi-dimension server evaluation
// ---------------------------------------------------------------------------

struct AgentAttempt {
    std::string answer;
    bool ok = false;  // a response was produced at all
    double elapsed = 0.0;
    double output_tokens = 0.0;
};

struct ServerEvalReport {
    double sr = 0.0;                      // percent of instructions scoring non-zero
    std::optional<double> quality;        // mean of non-zero scores; absent when all fail
    int feature = 0;                      // sum of per-tool scores
    int coverage = 1;                     // 1 (country-specific) .. 5 (global)
    double mean_time = 0.0;
    double mean_tokens = 0.0;
    std::optional<long> monthly_calls;

    json to_json() const {
        json o{{"SR", sr},       {"Feature", feature},     {"Coverage", coverage},
               {"Time", mean_time}, {"Token", mean_tokens}};
        o["Quality"] = quality ? json(*quality) : json();
        if (monthly_calls) o["Monthly Call"] = *monthly_calls;
        return o;
    }
};

namespace detail_eval {

inline int parse_score_0_5(const std::string& reply, const std::string& key) {
    if (auto j = detail::extract_json(reply)) {
        if (j->is_object()) {
            if (j->contains(key) && (*j)[key].is_number())
                return std::clamp((*j)[key].get<int>(), 0, 5);
            for (auto it = j->begin(); it != j->end(); ++it)
                if (it.value().is_number()) return std::clamp(it.value().get<int>(), 0, 5);
        }
        if (j->is_number()) return std::clamp(j->get<int>(), 0, 5);
    }
    static const std::regex num_re("[0-5]");
    std::smatch m;
    if (std::regex_search(reply, m, num_re)) return std::stoi(m[0]);
    return 0;
}

}  // namespace detail_eval

// Runs the agent on each instruction, scores the answers 0-5 with the judge
// (failed attempts score 0 without a judge call), scores each tool 1-5 for
// feature richness, and asks for a 1-5 geographic coverage rating.
inline ServerEvalReport server_eval(
    const ServerRecord& server, const std::vector<std::string>& instructions,
    const std::function<AgentAttempt(const std::string& instruction)>& agent,
    ChatProvider& judge, const ModelSpec& judge_model, const std::string& quality_prompt) {
    ServerEvalReport report;
    if (instructions.empty()) return report;

    std::vector<double> times, tokens;
    size_t nonzero = 0;
    double score_sum = 0.0;
    for (const auto& instruction : instructions) {
        AgentAttempt attempt = agent(instruction);
        int score = 0;
        if (attempt.ok) {
            std::string prompt = quality_prompt;
            auto sub = [&prompt](const std::string& key, const std::string& value) {
                size_t pos;
                while ((pos = prompt.find(key)) != std::string::npos)
                    prompt.replace(pos, key.size(), value);
            };
            sub("{query}", instruction);
            sub("{answers_text}", server.name + ": " + attempt.answer);
            try {
                ChatResult r = judge.chat(judge_model, {ChatMessage::user(prompt)}, {});
                score = detail_eval::parse_score_0_5(r.text, server.name);
            } catch (const ProviderError&) {
                score = 0;
            }
            times.push_back(attempt.elapsed);
            tokens.push_back(attempt.output_tokens);
        }
        if (score > 0) {
            ++nonzero;
            score_sum += score;
        }
    }
    report.sr = 100.0 * double(nonzero) / double(instructions.size());
    if (nonzero > 0) report.quality = score_sum / double(nonzero);
    if (!times.empty()) {
        for (double t : times) report.mean_time += t;
        report.mean_time /= double(times.size());
        for (double t : tokens) report.mean_tokens += t;
        report.mean_tokens /= double(tokens.size());
    }

    for (const auto& tool : server.tools) {
        try {
            ChatResult r = judge.chat(
                judge_model,
                {ChatMessage::system("Score this tool's feature richness from 1 (basic) to 5 "
                                     "(advanced). Reply with the number only."),
                 ChatMessage::user(tool.name + ": " + tool.description)},
                {});
            report.feature += std::max(1, detail_eval::parse_score_0_5(r.text, tool.name));
        } catch (const ProviderError&) {
            report.feature += 1;
        }
    }
    try {
        ChatResult r = judge.chat(
            judge_model,
            {ChatMessage::system("Rate the geographic coverage of this server from 1 "
                                 "(country-specific) to 5 (global). Reply with the number only."),
             ChatMessage::user(server.name + ": " + server.description)},
            {});
        report.coverage = std::clamp(detail_eval::parse_score_0_5(r.text, server.name), 1, 5);
    } catch (const ProviderError&) {
        report.coverage = 1;
    }
    return report;
}

}  // namespace mcpflow
