#pragma once

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/detail/sha256.hpp"
#include "mcpflow/gateway.hpp"

namespace mcpflow {

// Deterministic pattern-based chat provider. Recognizes each pipeline prompt
// by its fixed phrasing and produces a plausible, schema-consistent reply
// that is a pure function of the prompt text. Lets the full pipeline run
// offline and makes cassette recording reproducible.
class DeterministicChatProvider : public ChatProvider {
public:
    ChatResult chat(const ModelSpec& model, const std::vector<ChatMessage>& messages,
                    const ChatParams&) override {
        std::string prompt;
        for (const auto& m : messages) prompt += m.content + "\n";
        ChatResult r;
        r.text = respond(prompt);
        for (const auto& m : messages) r.usage.input_tokens += estimate_tokens(m.content);
        r.usage.output_tokens = estimate_tokens(r.text);
        r.usage.cost = usage_cost(model, r.usage.input_tokens, r.usage.output_tokens);
        r.usage.estimated = true;
        return r;
    }

private:
    static uint64_t small_hash(const std::string& s) {
        std::string h = detail::sha256_hex(s);
        return std::stoull(h.substr(0, 12), nullptr, 16);
    }

    static std::string field_after(const std::string& text, const std::string& marker) {
        size_t pos = text.find(marker);
        if (pos == std::string::npos) return "";
        size_t start = pos + marker.size();
        size_t end = text.find('\n', start);
        return detail::trim(text.substr(start, end - start));
    }

    static json schema_after(const std::string& text, const std::string& marker) {
        size_t pos = text.find(marker);
        if (pos == std::string::npos) return json::object();
        auto j = detail::extract_json(text.substr(pos + marker.size()));
        return j && j->is_object() ? *j : json::object();
    }

    static json value_for(const json& prop, const std::string& param, const std::string& salt) {
        std::string type =
            prop.is_object() && prop.contains("type") && prop["type"].is_string()
                ? prop["type"].get<std::string>()
                : "string";
        uint64_t h = small_hash(param + "/" + salt);
        if (type == "number") return double(h % 97);
        if (type == "integer") return int64_t(h % 97);
        if (type == "boolean") return h % 2 == 0;
        if (type == "array") return json::array();
        if (type == "object") return json::object();
        static const std::vector<std::string> words = {"harbor", "meadow", "lantern", "violet",
                                                       "summit", "willow", "ember", "quartz"};
        return words[h % words.size()] + "-" + std::to_string(h % 100);
    }

    std::string respond(const std::string& prompt) const {
        if (prompt.find("[Instruction1] <your generated instruction>") != std::string::npos)
            return instructions(prompt);
        if (prompt.find("supplement any missing information") != std::string::npos)
            return slot_fill(prompt);
        if (prompt.find("Prompt Rewriter") != std::string::npos) return evolve(prompt);
        if (prompt.find("Generate the function call") != std::string::npos)
            return function_call(prompt);
        if (prompt.find("Reply with the name of the single tool") != std::string::npos)
            return pick_tool(prompt);
        if (prompt.find("[Score]: 1--10") != std::string::npos)
            return "[Score]: " + std::to_string(6 + int(small_hash(prompt) % 4));
        if (prompt.find("valid or invalid") != std::string::npos)
            return (prompt.find("Error") != std::string::npos ||
                    prompt.find("transport failure") != std::string::npos)
                       ? "invalid"
                       : "valid";
        if (prompt.find("Reply with the answer only.") != std::string::npos)
            return summarize(prompt);
        if (prompt.find("Classify the MCP server") != std::string::npos)
            return "Developer Tools";
        if (prompt.find("correct, incorrect, or partial") != std::string::npos)
            return answer_judge(prompt);
        if (prompt.find("listed mcp servers") != std::string::npos) return "[]";
        if (prompt.find("mcpServers") != std::string::npos) return "{}";
        return "OK";
    }

    std::string instructions(const std::string& prompt) const {
        // Use the tool block from the input section, not the few-shot example.
        size_t info = prompt.find("- **Tool information**:");
        std::string section = info == std::string::npos ? prompt : prompt.substr(info);
        std::string desc = field_after(section, "[Tool Description]");
        if (desc.empty()) desc = "perform the task";
        std::string base = desc;
        while (!base.empty() && (base.back() == '.' || base.back() == ' ')) base.pop_back();
        if (!base.empty()) base[0] = char(std::tolower(base[0]));
        uint64_t h = small_hash(section);
        static const std::vector<std::string> frames = {
            "Could you %s for me? I need this before the end of the day %u.",
            "Please %s; my colleague asked about it in ticket %u.",
            "I would like you to %s as part of project review %u.",
            "For tomorrow's briefing %u, go ahead and %s.",
            "Help me out: %s, referencing request %u."};
        std::string out;
        for (int i = 0; i < 5; ++i) {
            char buf[512];
            const std::string& f = frames[size_t(i)];
            if (f.find("%s") < f.find("%u"))
                std::snprintf(buf, sizeof buf, f.c_str(), base.c_str(), unsigned((h + uint64_t(i)) % 1000));
            else
                std::snprintf(buf, sizeof buf, f.c_str(), unsigned((h + uint64_t(i)) % 1000), base.c_str());
            out += "[Instruction" + std::to_string(i + 1) + "] " + buf + "\n";
        }
        return out;
    }

    std::string slot_fill(const std::string& prompt) const {
        std::string query = field_after(prompt, "- **User Query**:");
        json schema = schema_after(prompt, "[Tool Schema]");
        std::string out = query;
        const json props = schema.value("properties", json::object());
        for (const auto& req : schema.value("required", json::array())) {
            std::string name = req.get<std::string>();
            if (detail::to_lower(out).find(detail::to_lower(name)) != std::string::npos) continue;
            json v = value_for(props.value(name, json::object()), name, query);
            std::string vs = v.is_string() ? v.get<std::string>() : v.dump();
            out += " Use " + name + " " + vs + ".";
        }
        return out;
    }

    std::string evolve(const std::string& prompt) const {
        std::string given = field_after(prompt, "#The Given Prompt#:");
        if (given.empty()) {
            size_t pos = prompt.find("#The Given Prompt#:");
            if (pos != std::string::npos) {
                size_t start = pos + std::string("#The Given Prompt#:").size();
                size_t end = prompt.find("#Rewritten Prompt#", start);
                given = detail::trim(prompt.substr(start, end - start));
            }
        }
        static const std::vector<std::string> tails = {
            " Double-check every detail and state your confidence briefly at the end.",
            " Explain the reasoning behind each step before giving the final result.",
            " Be precise about names, dates, and units throughout your response.",
            " Consider at least two alternatives before settling on the final answer."};
        return given + tails[small_hash(given) % tails.size()];
    }

    std::string function_call(const std::string& prompt) const {
        std::string tool = field_after(prompt, "Tool name:");
        json schema = schema_after(prompt, "Tool schema:");
        std::string query = field_after(prompt, "User request:");
        json args = json::object();
        const json props = schema.value("properties", json::object());
        for (const auto& req : schema.value("required", json::array())) {
            std::string name = req.get<std::string>();
            args[name] = value_for(props.value(name, json::object()), name, query);
        }
        return json{{"name", tool}, {"arguments", args}}.dump();
    }

    // Picks the candidate whose description overlaps the request the most;
    // generated instructions derive from the ground-truth description, so
    // this converges on the right tool without name leakage.
    std::string pick_tool(const std::string& prompt) const {
        std::string query = detail::to_lower(field_after(prompt, "User request:"));
        std::set<std::string> qwords;
        std::istringstream qs(query);
        for (std::string w; qs >> w;) qwords.insert(w);

        size_t pos = prompt.find("Candidate tools:");
        std::istringstream lines(pos == std::string::npos ? prompt : prompt.substr(pos));
        std::string line, best_name;
        int best_score = -1;
        while (std::getline(lines, line)) {
            size_t dot = line.find(". ");
            size_t colon = line.find(": ", dot);
            if (dot == std::string::npos || colon == std::string::npos) continue;
            if (line.find_first_not_of("0123456789") != dot) continue;
            std::string name = line.substr(dot + 2, colon - dot - 2);
            std::istringstream ds(detail::to_lower(line.substr(colon + 2)));
            int score = 0;
            for (std::string w; ds >> w;) score += qwords.count(w) ? 1 : 0;
            if (score > best_score) {
                best_score = score;
                best_name = name;
            }
        }
        return best_name.empty() ? "none" : best_name;
    }

    std::string summarize(const std::string& prompt) const {
        size_t pos = prompt.find("Tool output:");
        if (pos == std::string::npos) return "Done.";
        size_t start = pos + std::string("Tool output:").size();
        size_t end = prompt.find("\nReply with", start);
        std::string body = detail::trim(prompt.substr(start, end - start));
        return body.empty() ? "The tool returned no output." : "Result: " + body;
    }

    std::string answer_judge(const std::string& prompt) const {
        std::string gt = detail::to_lower(field_after(prompt, "Reference answer:"));
        std::string answer = detail::to_lower(field_after(prompt, "Candidate answer:"));
        return !gt.empty() && answer.find(gt) != std::string::npos ? "correct" : "incorrect";
    }
};

}  // namespace mcpflow
