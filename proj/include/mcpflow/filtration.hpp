#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/detail/rng.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/synthesis.hpp"

namespace mcpflow {

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

enum class FilterStage { similarity, invocation, quality, trajectory };

inline std::string to_string(FilterStage s) {
    switch (s) {
        case FilterStage::similarity: return "similarity";
        case FilterStage::invocation: return "invocation";
        case FilterStage::quality: return "quality";
        case FilterStage::trajectory: return "trajectory";
    }
    return "similarity";
}

struct FilterVerdict {
    FilterStage stage = FilterStage::similarity;
    bool keep = true;
    bool deferred = false;  // provider failure; retry the sample later
    std::optional<double> score;
    std::string detail;

    json to_json() const {
        json j{{"stage", ::mcpflow::to_string(stage)}, {"keep", keep}, {"deferred", deferred},
               {"detail", detail}};
        if (score) j["score"] = *score;
        return j;
    }
};

struct FilterPrompts {
    std::string invocation_judge;  // {query} {candidates}
    std::string quality;           // {query}; reply contains "[Score]: n"
    std::string trajectory_judge;  // {query} {call} {response} {summary}
};

// ---------------------------------------------------------------------------
// Stage 1: embedding similarity. Drop iff cosine(instruction, description)
// strictly exceeds the threshold; exactly at the threshold is kept.
// ---------------------------------------------------------------------------

inline FilterVerdict similarity_filter(const Sample& sample, EmbedProvider& embed,
                                       double threshold = 0.8) {
    FilterVerdict v;
    v.stage = FilterStage::similarity;
    std::string description = sample.gt_tool.description;
    if (description.empty()) description = sample.gt_tool.name;
    try {
        auto vecs = embed.embed({sample.instruction, description});
        double c = cosine(vecs[0], vecs[1]);
        v.score = c;
        v.keep = !(c > threshold);
        v.detail = v.keep ? "cosine within threshold" : "instruction too close to tool description";
    } catch (const ProviderError& e) {
        v.deferred = true;
        v.detail = std::string("embedding failed: ") + e.what();
    }
    return v;
}

// ---------------------------------------------------------------------------
// Stage 2: invocation check. Two judges each see the ground-truth tool plus
// two seeded distractors in shuffled order; keep iff at least one judge
// picks the ground truth.
// ---------------------------------------------------------------------------

struct JudgeSpec {
    ChatProvider* provider = nullptr;
    ModelSpec model;
};

inline FilterVerdict invocation_filter(const Sample& sample,
                                       const std::vector<ToolSpec>& tool_pool,
                                       const std::vector<JudgeSpec>& judges,
                                       const FilterPrompts& prompts, uint64_t seed) {
    FilterVerdict v;
    v.stage = FilterStage::invocation;
    if (judges.size() != 2) throw std::invalid_argument("invocation_filter: exactly 2 judges");

    // Distractors: tools from other samples, deterministic under the seed.
    std::vector<const ToolSpec*> others;
    for (const auto& t : tool_pool)
        if (t.name != sample.gt_tool.name) others.push_back(&t);
    std::sort(others.begin(), others.end(),
              [](const ToolSpec* a, const ToolSpec* b) { return a->name < b->name; });
    detail::Rng rng(detail::derive_seed(seed, "invocation/" + sample.id));
    std::vector<const ToolSpec*> candidates{&sample.gt_tool};
    if (!others.empty()) {
        std::vector<size_t> idx(others.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        for (size_t i = 0; i < idx.size() && candidates.size() < 3; ++i)
            candidates.push_back(others[idx[i]]);
    }
    std::vector<size_t> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::string listing;
    for (size_t i = 0; i < order.size(); ++i) {
        const ToolSpec* t = candidates[order[i]];
        listing += std::to_string(i + 1) + ". " + t->name + ": " + t->description + "\n";
    }
    std::string prompt = render_template(prompts.invocation_judge,
                                         {{"{query}", sample.instruction},
                                          {"{candidates}", listing}});

    int picked_gt = 0;
    bool any_deferred = false;
    std::string detail;
    for (size_t ji = 0; ji < judges.size(); ++ji) {
        try {
            ChatResult r = judges[ji].provider->chat(judges[ji].model,
                                                     {ChatMessage::user(prompt)}, {});
            std::string reply = detail::to_lower(detail::trim(r.text));
            bool hit = reply.find(detail::to_lower(sample.gt_tool.name)) != std::string::npos;
            if (hit) ++picked_gt;
            detail += "judge" + std::to_string(ji + 1) + (hit ? ":gt " : ":other ");
        } catch (const ProviderError& e) {
            any_deferred = true;
            detail += "judge" + std::to_string(ji + 1) + ":failed ";
            (void)e;
        }
    }
    if (picked_gt == 0 && any_deferred) {
        v.deferred = true;  // cannot conclude a drop with a judge missing
        v.detail = detail + "(deferred)";
        return v;
    }
    v.keep = picked_gt >= 1;
    v.score = double(picked_gt);
    v.detail = detail;
    return v;
}

// ---------------------------------------------------------------------------
// Stage 3: LLM quality scoring. Parse "[Score]: n" (tolerating markdown
// bold); keep iff score >= threshold, so a score exactly at the threshold
// survives. An unparseable reply is retried once, then dropped.
// ---------------------------------------------------------------------------

inline std::optional<int> parse_quality_score(const std::string& text) {
    static const std::regex re(R"(\**\[\s*Score\s*\]\**\s*[::]?\s*\**\s*(10|[0-9])\b)",
                               std::regex::icase);
    std::smatch m;
    if (std::regex_search(text, m, re)) return std::stoi(m[1].str());
    return std::nullopt;
}

inline FilterVerdict quality_filter(const Sample& sample, const JudgeSpec& judge,
                                    const FilterPrompts& prompts, int threshold = 6) {
    FilterVerdict v;
    v.stage = FilterStage::quality;
    std::string prompt = render_template(prompts.quality, {{"{query}", sample.instruction}});
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            ChatResult r = judge.provider->chat(judge.model, {ChatMessage::user(prompt)}, {});
            auto score = parse_quality_score(r.text);
            if (!score) continue;  // deferred once, then dropped below
            v.score = double(*score);
            v.keep = *score >= threshold;
            v.detail = v.keep ? "score at or above threshold" : "score below threshold";
            return v;
        } catch (const ProviderError& e) {
            v.deferred = true;
            v.detail = std::string("judge failed: ") + e.what();
            return v;
        }
    }
    v.keep = false;
    v.detail = "unparseable score after retry";
    return v;
}

// ---------------------------------------------------------------------------
// Stage 4: trajectory validation. Transport failures and tool errors are
// dropped outright without spending judge calls; otherwise an LLM judge
// labels the trajectory valid or invalid.
// ---------------------------------------------------------------------------

inline FilterVerdict trajectory_filter(const Trajectory& trajectory, const JudgeSpec& judge,
                                       const FilterPrompts& prompts) {
    FilterVerdict v;
    v.stage = FilterStage::trajectory;
    if (trajectory.tool_result.transport_failure) {
        v.keep = false;
        v.detail = "transport failure";
        return v;
    }
    if (trajectory.tool_result.is_error) {
        v.keep = false;
        v.detail = "tool reported an error";
        return v;
    }
    std::string query, call, response, summary;
    for (const auto& m : trajectory.messages) {
        if (m.role == Role::user && query.empty()) query = m.content;
        else if (m.role == Role::assistant && call.empty()) call = m.content;
        else if (m.role == Role::tool) response = m.content;
        else if (m.role == Role::assistant) summary = m.content;
    }
    std::string prompt = render_template(prompts.trajectory_judge,
                                         {{"{query}", query},
                                          {"{call}", call},
                                          {"{response}", response},
                                          {"{summary}", summary}});
    try {
        ChatResult r = judge.provider->chat(judge.model, {ChatMessage::user(prompt)}, {});
        std::string reply = detail::to_lower(detail::trim(r.text));
        bool invalid = reply.find("invalid") != std::string::npos;
        v.keep = !invalid;
        v.detail = invalid ? "judge: invalid" : "judge: valid";
    } catch (const ProviderError& e) {
        v.deferred = true;
        v.detail = std::string("judge failed: ") + e.what();
    }
    return v;
}

// ---------------------------------------------------------------------------
// Sequential composition
// ---------------------------------------------------------------------------

struct FilterReport {
    size_t input = 0;
    size_t kept = 0;
    std::map<std::string, size_t> dropped_by_stage;
    size_t deferred = 0;

    json to_json() const {
        json drops = json::object();
        for (const auto& [k, n] : dropped_by_stage) drops[k] = n;
        return json{{"input", input}, {"kept", kept}, {"dropped_by_stage", drops},
                    {"deferred", deferred}};
    }
};

struct FilterContext {
    EmbedProvider* embed = nullptr;
    std::vector<JudgeSpec> invocation_judges;  // exactly two
    JudgeSpec quality_judge;
    JudgeSpec trajectory_judge;
    FilterPrompts prompts;
    double similarity_threshold = 0.8;
    int quality_threshold = 6;
    uint64_t seed = 0;
    const std::map<std::string, Trajectory>* trajectories = nullptr;  // sample_id -> trajectory
};

struct FilterOutcome {
    std::vector<Sample> kept;
    std::vector<Sample> deferred;
    FilterReport report;
};

// Runs the four stages in order; a sample dropped by an earlier stage never
// reaches a later one. Every verdict is recorded on the sample. Samples with
// deferred verdicts are reported separately for retry; they are not kept.
inline FilterOutcome run_filters(std::vector<Sample> samples, const FilterContext& ctx) {
    FilterOutcome out;
    out.report.input = samples.size();

    std::vector<ToolSpec> pool;
    for (const auto& s : samples) {
        bool seen = false;
        for (const auto& t : pool) seen = seen || t.name == s.gt_tool.name;
        if (!seen) pool.push_back(s.gt_tool);
    }

    for (auto& s : samples) {
        bool kept = true, deferred = false;
        auto record = [&](const FilterVerdict& v) {
            s.filter_verdicts[::mcpflow::to_string(v.stage)] = v.to_json();
            if (v.deferred) deferred = true;
            else if (!v.keep) {
                kept = false;
                ++out.report.dropped_by_stage[::mcpflow::to_string(v.stage)];
            }
            return !v.deferred && v.keep;
        };

        if (record(similarity_filter(s, *ctx.embed, ctx.similarity_threshold)) &&
            record(invocation_filter(s, pool, ctx.invocation_judges, ctx.prompts, ctx.seed)) &&
            record(quality_filter(s, ctx.quality_judge, ctx.prompts, ctx.quality_threshold))) {
            if (ctx.trajectories) {
                auto it = ctx.trajectories->find(s.id);
                if (it != ctx.trajectories->end())
                    record(trajectory_filter(it->second, ctx.trajectory_judge, ctx.prompts));
            }
        }

        if (deferred) {
            out.deferred.push_back(std::move(s));
            ++out.report.deferred;
        } else if (kept) {
            out.kept.push_back(std::move(s));
        }
    }
    out.report.kept = out.kept.size();
    return out;
}

}  // namespace mcpflow
