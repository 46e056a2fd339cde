#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/detail/rng.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/registry.hpp"
#include "mcpflow/synthesis.hpp"

namespace mcpflow {

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class Split { train, seen_test, unseen_tool, unseen_server };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::seen_test: return "seen_test";
        case Split::unseen_tool: return "unseen_tool";
        case Split::unseen_server: return "unseen_server";
    }
    return "train";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "seen_test") return Split::seen_test;
    if (s == "unseen_tool") return Split::unseen_tool;
    if (s == "unseen_server") return Split::unseen_server;
    throw std::invalid_argument("unknown split: " + s);
}

inline std::string tool_key(const std::string& server_id, const std::string& tool_name) {
    return server_id + "/" + tool_name;
}

struct SplitAssignment {
    uint64_t seed = 0;
    std::set<std::string> unseen_servers;                 // server ids
    std::set<std::string> unseen_tools;                   // server_id/tool_name
    std::map<std::string, Split> sample_splits;           // sample id -> effective split
    std::vector<std::string> warnings;

    Split of(const std::string& sample_id) const {
        auto it = sample_splits.find(sample_id);
        if (it == sample_splits.end())
            throw std::out_of_range("sample not in split assignment: " + sample_id);
        return it->second;
    }

    json to_json() const {
        json samples = json::object();
        for (const auto& [id, sp] : sample_splits) samples[id] = ::mcpflow::to_string(sp);
        return json{{"schema_version", 1},
                    {"seed", seed},
                    {"unseen_servers", json(std::vector<std::string>(unseen_servers.begin(),
                                                                     unseen_servers.end()))},
                    {"unseen_tools", json(std::vector<std::string>(unseen_tools.begin(),
                                                                   unseen_tools.end()))},
                    {"sample_splits", samples},
                    {"warnings", warnings}};
    }

    static SplitAssignment from_json(const json& j) {
        SplitAssignment a;
        a.seed = j.value("seed", 0ULL);
        for (const auto& s : j.value("unseen_servers", json::array()))
            a.unseen_servers.insert(s.get<std::string>());
        for (const auto& t : j.value("unseen_tools", json::array()))
            a.unseen_tools.insert(t.get<std::string>());
        const json samples = j.value("sample_splits", json::object());
        for (auto it = samples.begin(); it != samples.end(); ++it)
            a.sample_splits[it.key()] = parse_split(it.value().get<std::string>());
        for (const auto& w : j.value("warnings", json::array()))
            a.warnings.push_back(w.get<std::string>());
        return a;
    }
};

namespace detail_split {

// ceil(n/d) at or above d, else max(1, floor(n/d)) with a warning emitted by
// the caller; always at least 1 for non-empty groups.
inline size_t holdout_count(size_t n, size_t d, bool& degenerate) {
    if (n == 0) return 0;
    if (n >= d) return (n + d - 1) / d;
    degenerate = true;
    return std::max<size_t>(1, n / d);
}

}  // namespace detail_split

// Three-way leakage-free split. Per marketplace: one thirteenth of servers
// become unseen_server; within the remaining servers, one twelfth of tools
// become unseen_tool; of the remaining samples, one eleventh become
// seen_test. Deterministic under the seed regardless of input order.
inline SplitAssignment split_dataset(const Catalog& catalog, const std::vector<Sample>& samples,
                                     uint64_t seed) {
    SplitAssignment a;
    a.seed = seed;

    // Group servers with samples by marketplace, sorted for determinism.
    std::map<Marketplace, std::vector<std::string>> servers_by_market;
    std::set<std::string> servers_with_samples;
    for (const auto& s : samples) servers_with_samples.insert(s.server_id);
    for (const auto& [id, rec] : catalog.records)
        if (servers_with_samples.count(id)) servers_by_market[rec.marketplace].push_back(id);
    for (auto& [mk, ids] : servers_by_market) std::sort(ids.begin(), ids.end());

    for (auto& [mk, ids] : servers_by_market) {
        detail::Rng rng(detail::derive_seed(seed, "servers:" + to_string(mk)));
        rng.shuffle(ids);
        bool degenerate = false;
        size_t holdout = detail_split::holdout_count(ids.size(), 13, degenerate);
        if (degenerate)
            a.warnings.push_back("marketplace " + to_string(mk) + " has only " +
                                 std::to_string(ids.size()) +
                                 " servers; unseen_server holdout degenerates to " +
                                 std::to_string(holdout));
        for (size_t i = 0; i < holdout; ++i) a.unseen_servers.insert(ids[i]);

        // Tools of the remaining (seen) servers.
        std::vector<std::string> keys;
        std::set<std::string> seen_servers(ids.begin() + long(holdout), ids.end());
        std::set<std::string> key_set;
        for (const auto& s : samples)
            if (seen_servers.count(s.server_id))
                key_set.insert(tool_key(s.server_id, s.gt_tool.name));
        keys.assign(key_set.begin(), key_set.end());
        detail::Rng trng(detail::derive_seed(seed, "tools:" + to_string(mk)));
        trng.shuffle(keys);
        bool tool_degenerate = false;
        size_t tool_holdout = detail_split::holdout_count(keys.size(), 12, tool_degenerate);
        if (tool_degenerate && !keys.empty())
            a.warnings.push_back("marketplace " + to_string(mk) + " has only " +
                                 std::to_string(keys.size()) +
                                 " seen tools; unseen_tool holdout degenerates to " +
                                 std::to_string(tool_holdout));
        for (size_t i = 0; i < tool_holdout; ++i) a.unseen_tools.insert(keys[i]);

        // Samples on seen servers and seen tools: one eleventh to seen_test.
        std::vector<std::string> remaining;
        for (const auto& s : samples) {
            if (!seen_servers.count(s.server_id)) continue;
            if (a.unseen_tools.count(tool_key(s.server_id, s.gt_tool.name))) continue;
            remaining.push_back(s.id);
        }
        std::sort(remaining.begin(), remaining.end());
        detail::Rng srng(detail::derive_seed(seed, "samples:" + to_string(mk)));
        srng.shuffle(remaining);
        bool sample_degenerate = false;
        size_t test_count = detail_split::holdout_count(remaining.size(), 11, sample_degenerate);
        std::set<std::string> test_ids(remaining.begin(), remaining.begin() + long(test_count));
        for (const auto& id : remaining)
            a.sample_splits[id] = test_ids.count(id) ? Split::seen_test : Split::train;
    }

    // Effective split for samples on held-out servers and tools.
    for (const auto& s : samples) {
        if (a.unseen_servers.count(s.server_id))
            a.sample_splits[s.id] = Split::unseen_server;
        else if (a.unseen_tools.count(tool_key(s.server_id, s.gt_tool.name)))
            a.sample_splits[s.id] = Split::unseen_tool;
    }
    return a;
}

// Verifies the leakage invariants; returns human-readable violations.
inline std::vector<std::string> check_split_hygiene(const SplitAssignment& a,
                                                    const std::vector<Sample>& samples) {
    std::vector<std::string> violations;
    std::set<std::string> train_servers, train_tools;
    for (const auto& s : samples) {
        auto it = a.sample_splits.find(s.id);
        if (it == a.sample_splits.end()) {
            violations.push_back("sample without split: " + s.id);
            continue;
        }
        if (it->second == Split::train || it->second == Split::seen_test) {
            train_servers.insert(s.server_id);
            train_tools.insert(tool_key(s.server_id, s.gt_tool.name));
        }
    }
    for (const auto& s : samples) {
        Split sp = a.sample_splits.at(s.id);
        std::string key = tool_key(s.server_id, s.gt_tool.name);
        if (sp == Split::unseen_server && train_servers.count(s.server_id))
            violations.push_back("unseen_server leak: server " + s.server_id);
        if (sp == Split::unseen_tool && train_tools.count(key))
            violations.push_back("unseen_tool leak: tool " + key);
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Training example assembly
// ---------------------------------------------------------------------------

struct AssembledExample {
    std::string sample_id;
    Split split = Split::train;
    std::string instruction;
    std::vector<ToolSpec> candidate_tools;  // ground truth exactly once
    FunctionCall gt_call;
};

// Candidate list: ground truth plus seeded distractors from the seen-tool
// pool, up to tool_size total, order shuffled deterministically per
// (seed, sample id). Fewer pool tools than tool_size is fine.
inline AssembledExample assemble_example(const Sample& sample, Split split,
                                         const std::vector<ToolSpec>& seen_pool,
                                         size_t tool_size, uint64_t seed) {
    AssembledExample e;
    e.sample_id = sample.id;
    e.split = split;
    e.instruction = sample.instruction;
    e.gt_call = sample.gt_call;

    std::vector<const ToolSpec*> others;
    for (const auto& t : seen_pool)
        if (t.name != sample.gt_tool.name) others.push_back(&t);
    std::sort(others.begin(), others.end(), [](const ToolSpec* x, const ToolSpec* y) {
        return x->name < y->name;
    });
    detail::Rng rng(detail::derive_seed(seed, "assemble/" + sample.id));
    std::vector<size_t> idx(others.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);

    e.candidate_tools.push_back(sample.gt_tool);
    for (size_t i = 0; i < idx.size() && e.candidate_tools.size() < tool_size; ++i)
        e.candidate_tools.push_back(*others[idx[i]]);
    rng.shuffle(e.candidate_tools);

    size_t gt_count = 0;
    for (const auto& t : e.candidate_tools) gt_count += t.name == sample.gt_tool.name;
    if (gt_count != 1)
        throw std::logic_error("assemble_example: ground truth must appear exactly once");
    return e;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

enum class ExportFormat { train_conversations, eval_records };

inline std::string render_tool_block(const std::vector<ToolSpec>& tools) {
    json arr = json::array();
    for (const auto& t : tools) arr.push_back(::mcpflow::to_json(t));
    return arr.dump();
}

// Serializes examples as JSONL ordered by sample id. Mixing train and eval
// splits in one export is a leakage hazard and is refused.
inline std::string export_examples(std::vector<AssembledExample> examples, ExportFormat format) {
    bool has_train = false, has_eval = false;
    for (const auto& e : examples) {
        bool train_like = e.split == Split::train;
        has_train = has_train || train_like;
        has_eval = has_eval || !train_like;
    }
    if (has_train && has_eval)
        throw std::invalid_argument("export refused: train and eval splits mixed in one export");
    if (format == ExportFormat::train_conversations && has_eval)
        throw std::invalid_argument("export refused: eval splits in a training export");
    if (format == ExportFormat::eval_records && has_train)
        throw std::invalid_argument("export refused: train split in an eval export");

    std::sort(examples.begin(), examples.end(),
              [](const AssembledExample& a, const AssembledExample& b) {
                  return a.sample_id < b.sample_id;
              });
    std::string out;
    for (const auto& e : examples) {
        json line;
        if (format == ExportFormat::train_conversations) {
            line = json{{"id", e.sample_id},
                        {"conversations",
                         json::array({{{"role", "system"},
                                       {"content", "You are a tool-calling assistant. Available "
                                                   "tools:\n" + render_tool_block(e.candidate_tools)}},
                                      {{"role", "user"}, {"content", e.instruction}},
                                      {{"role", "assistant"},
                                       {"content", e.gt_call.to_json().dump()}}})}};
        } else {
            json tools = json::array();
            for (const auto& t : e.candidate_tools) tools.push_back(::mcpflow::to_json(t));
            line = json{{"id", e.sample_id},
                        {"split", ::mcpflow::to_string(e.split)},
                        {"instruction", e.instruction},
                        {"candidate_tools", tools},
                        {"gt_call", e.gt_call.to_json()}};
        }
        out += line.dump() + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Retrieval index
// ---------------------------------------------------------------------------

struct RetrievalIndex {
    size_t dimension = 0;
    std::string provider_id;
    std::vector<std::pair<std::string, EmbeddingVector>> entries;  // sample id, unit vector

    json to_json() const {
        json items = json::array();
        for (const auto& [id, vec] : entries)
            items.push_back({{"id", id}, {"vector", vec.values}});
        return json{{"schema_version", 1}, {"dimension", dimension},
                    {"provider_id", provider_id}, {"entries", items}};
    }

    static RetrievalIndex from_json(const json& j) {
        RetrievalIndex idx;
        idx.dimension = j.at("dimension").get<size_t>();
        idx.provider_id = j.value("provider_id", "");
        for (const auto& it : j.at("entries")) {
            EmbeddingVector v;
            v.values = it.at("vector").get<std::vector<double>>();
            if (v.values.size() != idx.dimension)
                throw std::runtime_error("retrieval index: entry dimension mismatch for sample " +
                                         it.value("id", std::string("?")));
            idx.entries.emplace_back(it.at("id").get<std::string>(), std::move(v));
        }
        return idx;
    }
};

// Builds the exemplar index over training-split samples only; offering any
// eval-split sample is refused to keep retrieval leakage-free.
inline RetrievalIndex build_index(const std::vector<Sample>& samples, const SplitAssignment& split,
                                  EmbedProvider& embed, const std::string& provider_id) {
    std::vector<const Sample*> train;
    for (const auto& s : samples) {
        if (split.of(s.id) != Split::train)
            throw std::invalid_argument("build_index refused: sample " + s.id +
                                        " is not in the train split");
        train.push_back(&s);
    }
    std::sort(train.begin(), train.end(),
              [](const Sample* a, const Sample* b) { return a->id < b->id; });

    RetrievalIndex idx;
    idx.dimension = embed.dimension();
    idx.provider_id = provider_id;
    std::vector<std::string> texts;
    for (const Sample* s : train) texts.push_back(s->instruction);
    if (!texts.empty()) {
        auto vecs = embed.embed(texts);
        for (size_t i = 0; i < train.size(); ++i)
            idx.entries.emplace_back(train[i]->id, std::move(vecs[i]));
    }
    return idx;
}

struct RetrievalHit {
    std::string sample_id;
    double score = 0.0;
};

// Exact top-k by cosine, descending; ties broken by ascending sample id.
// k larger than the index returns everything.
inline std::vector<RetrievalHit> retrieve(const RetrievalIndex& index, const std::string& query,
                                          size_t k, EmbedProvider& embed) {
    if (embed.dimension() != index.dimension)
        throw std::invalid_argument("retrieve: embedding dimension mismatch");
    auto qv = embed.embed({query})[0];
    std::vector<RetrievalHit> hits;
    for (const auto& [id, vec] : index.entries) hits.push_back({id, cosine(qv, vec)});
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.sample_id < b.sample_id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

// Prepends retrieved exemplars to the instruction with a fixed header.
inline std::string augment_prompt(const std::string& instruction,
                                  const std::vector<const Sample*>& exemplars) {
    std::string out = "Here are some examples of similar requests and the correct tool calls:\n";
    for (size_t i = 0; i < exemplars.size(); ++i) {
        out += "\nExample " + std::to_string(i + 1) + ":\nRequest: " + exemplars[i]->instruction +
               "\nCall: " + exemplars[i]->gt_call.to_json().dump() + "\n";
    }
    out += "\nNow handle this request:\n" + instruction;
    return out;
}

// ---------------------------------------------------------------------------
// Diversity statistic
// ---------------------------------------------------------------------------

// Mean pairwise cosine distance (1 - cosine) over a seeded subsample of at
// most max_subsample instructions. Deterministic under the seed.
inline double diversity_stat(const std::vector<std::string>& instructions, EmbedProvider& embed,
                             uint64_t seed, size_t max_subsample = 1000) {
    if (instructions.size() < 2)
        throw std::invalid_argument("diversity_stat: need at least two instructions");
    std::vector<std::string> pool = instructions;
    if (pool.size() > max_subsample) {
        detail::Rng rng(detail::derive_seed(seed, "diversity"));
        rng.shuffle(pool);
        pool.resize(max_subsample);
    }
    auto vecs = embed.embed(pool);
    double total = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < vecs.size(); ++i)
        for (size_t j = i + 1; j < vecs.size(); ++j) {
            total += 1.0 - cosine(vecs[i], vecs[j]);
            ++pairs;
        }
    return total / double(pairs);
}

}  // namespace mcpflow
