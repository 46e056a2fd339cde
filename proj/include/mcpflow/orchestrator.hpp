#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "mcpflow/dataset.hpp"
#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/filtration.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/harvest.hpp"
#include "mcpflow/mcp_client.hpp"
#include "mcpflow/providers.hpp"
#include "mcpflow/registry.hpp"
#include "mcpflow/synthesis.hpp"

namespace mcpflow {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct IngestSource {
    std::string path;
    Marketplace marketplace = Marketplace::Manual;
};

struct PipelineConfig {
    uint64_t seed = 42;
    fs::path run_dir = "run";
    fs::path assets_dir = "assets";
    fs::path cassette_dir;  // empty: call the provider directly
    bool replay_only = false;
    std::string provider = "fake";  // "fake" is the only offline provider
    fs::path env_context_path;
    fs::path prices_path;
    std::vector<IngestSource> ingest_sources;

    std::string generation_model = "gpt-4o";
    std::vector<std::string> judge_models = {"gpt-4o", "claude-4-sonnet"};
    std::string quality_judge_model = "gpt-4o";
    std::string summarizer_model = "gpt-4o";
    std::string backbone_model = "qwen3-4b";

    double similarity_threshold = 0.8;
    int quality_threshold = 6;
    int evolution_depth = 2;
    size_t tool_size = 10;
    int instructions_per_tool = 5;
    size_t retrieval_k = 5;
    size_t embed_dimension = 64;
    uint64_t embed_seed = 7;

    json raw = json::object();

    static PipelineConfig from_json(const json& j) {
        PipelineConfig c;
        c.raw = j;
        c.seed = j.value("seed", c.seed);
        c.run_dir = j.value("run_dir", c.run_dir.string());
        c.assets_dir = j.value("assets_dir", c.assets_dir.string());
        c.cassette_dir = j.value("cassette_dir", "");
        c.replay_only = j.value("replay_only", false);
        c.provider = j.value("provider", c.provider);
        c.env_context_path = j.value("env_context", "");
        c.prices_path = j.value("prices", "");
        for (const auto& s : j.value("ingest_sources", json::array()))
            c.ingest_sources.push_back(
                {s.at("path").get<std::string>(),
                 parse_marketplace(s.at("marketplace").get<std::string>())});
        const json models = j.value("models", json::object());
        c.generation_model = models.value("generation", c.generation_model);
        if (models.contains("judge")) {
            c.judge_models.clear();
            for (const auto& m : models["judge"]) c.judge_models.push_back(m.get<std::string>());
        }
        c.quality_judge_model = models.value("quality_judge", c.quality_judge_model);
        c.summarizer_model = models.value("summarizer", c.summarizer_model);
        c.backbone_model = models.value("backbone", c.backbone_model);
        const json th = j.value("thresholds", json::object());
        c.similarity_threshold = th.value("similarity", c.similarity_threshold);
        c.quality_threshold = th.value("quality", c.quality_threshold);
        c.evolution_depth = th.value("evolution_depth", c.evolution_depth);
        c.tool_size = th.value("tool_size", c.tool_size);
        c.instructions_per_tool = th.value("instructions_per_tool", c.instructions_per_tool);
        c.retrieval_k = th.value("retrieval_k", c.retrieval_k);
        const json emb = j.value("embedding", json::object());
        c.embed_dimension = emb.value("dimension", c.embed_dimension);
        c.embed_seed = emb.value("seed", c.embed_seed);
        return c;
    }

    static PipelineConfig load(const fs::path& path) {
        return from_json(json::parse(detail::read_file(path)));
    }
};

struct ConfigReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    json effective = json::object();

    bool ok() const { return errors.empty(); }
};

// Validates ranges, flags a generation model double-booked as judge, and
// enumerates every ${VAR} environment reference with unset ones reported.
inline ConfigReport validate_config(const PipelineConfig& c) {
    ConfigReport r;
    if (c.similarity_threshold < 0.0 || c.similarity_threshold > 1.0)
        r.errors.push_back("similarity threshold must be in [0,1]");
    if (c.quality_threshold < 1 || c.quality_threshold > 10)
        r.errors.push_back("quality threshold must be in [1,10]");
    if (c.evolution_depth < 0) r.errors.push_back("evolution depth must be non-negative");
    if (c.tool_size < 1) r.errors.push_back("tool_size must be at least 1");
    if (c.instructions_per_tool < 1)
        r.errors.push_back("instructions_per_tool must be at least 1");
    if (c.embed_dimension < 2) r.errors.push_back("embedding dimension must be at least 2");
    if (c.judge_models.size() != 2)
        r.errors.push_back("exactly two judge models are required");
    for (const auto& jm : c.judge_models)
        if (jm == c.generation_model)
            r.warnings.push_back("judge model '" + jm +
                                 "' is also the generation model; scores may be biased");
    if (c.replay_only && c.cassette_dir.empty())
        r.errors.push_back("replay_only requires a cassette_dir");

    // Environment variable references anywhere in the raw config.
    std::set<std::string> vars;
    std::function<void(const json&)> scan = [&](const json& node) {
        if (node.is_string()) {
            static const std::regex re(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
            std::string s = node.get<std::string>();
            for (std::sregex_iterator it(s.begin(), s.end(), re), end; it != end; ++it)
                vars.insert((*it)[1].str());
        } else if (node.is_object() || node.is_array()) {
            for (const auto& child : node) scan(child);
        }
    };
    scan(c.raw);
    for (const auto& v : vars)
        if (!std::getenv(v.c_str()))
            r.warnings.push_back("environment variable referenced but unset: ${" + v + "}");

    r.effective = json{{"seed", c.seed},
                       {"run_dir", c.run_dir.string()},
                       {"provider", c.provider},
                       {"models",
                        {{"generation", c.generation_model},
                         {"judge", c.judge_models},
                         {"quality_judge", c.quality_judge_model},
                         {"summarizer", c.summarizer_model},
                         {"backbone", c.backbone_model}}},
                       {"thresholds",
                        {{"similarity", c.similarity_threshold},
                         {"quality", c.quality_threshold},
                         {"evolution_depth", c.evolution_depth},
                         {"tool_size", c.tool_size},
                         {"instructions_per_tool", c.instructions_per_tool},
                         {"retrieval_k", c.retrieval_k}}},
                       {"embedding", {{"dimension", c.embed_dimension}, {"seed", c.embed_seed}}},
                       {"env_vars", std::vector<std::string>(vars.begin(), vars.end())}};
    return r;
}

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order = {"harvest", "ingest", "dedupe", "probe",
                                                   "synth",   "filter", "split",  "export",
                                                   "index"};
    return order;
}

struct StageResult {
    std::string stage;
    std::string status;  // "done", "skipped", "cached", "planned"
    std::string detail;
};

class Orchestrator {
public:
    explicit Orchestrator(PipelineConfig config) : cfg_(std::move(config)) {
        ConfigReport r = validate_config(cfg_);
        if (!r.ok()) {
            std::string msg = "invalid pipeline config:";
            for (const auto& e : r.errors) msg += "\n  " + e;
            throw std::invalid_argument(msg);
        }
        warnings_ = r.warnings;

        std::shared_ptr<ChatProvider> base;
        if (cfg_.provider == "fake") base = std::make_shared<DeterministicChatProvider>();
        else
            throw std::invalid_argument("unknown provider: " + cfg_.provider +
                                        " (only 'fake' runs without network credentials)");
        if (!cfg_.cassette_dir.empty()) {
            fs::create_directories(cfg_.cassette_dir);
            auto store = std::make_shared<CassetteStore>(cfg_.cassette_dir);
            base = std::make_shared<CassetteChatProvider>(
                store, cfg_.replay_only ? nullptr : base);
        }
        llm_ = std::make_shared<Gateway>(base);
        embed_ = std::make_shared<HashEmbedProvider>(cfg_.embed_dimension, cfg_.embed_seed);

        if (!cfg_.prices_path.empty()) prices_ = PriceTable::load(cfg_.prices_path);
        env_ = cfg_.env_context_path.empty()
                   ? EnvContext::from_json(json::object())
                   : EnvContext::from_json(json::parse(detail::read_file(cfg_.env_context_path)));
        load_prompts();
    }

    const std::vector<std::string>& warnings() const { return warnings_; }
    ChatProvider& llm() { return *llm_; }
    EmbedProvider& embed() { return *embed_; }

    ModelSpec model(const std::string& id) const {
        if (prices_.contains(id)) return prices_.at(id);
        return ModelSpec{id, 0.0, 0.0};
    }

    // Runs the selected stage, or everything in order. Completed stages with
    // unchanged inputs are skipped when resuming; re-running a finished
    // pipeline is a no-op.
    std::vector<StageResult> run(const std::string& only_stage = "", bool resume = true,
                                 bool dry_run = false) {
        fs::create_directories(cfg_.run_dir / "checkpoints");
        std::vector<StageResult> results;
        for (const auto& stage : stage_order()) {
            if (!only_stage.empty() && stage != only_stage) continue;
            if (dry_run) {
                results.push_back({stage, "planned", ""});
                continue;
            }
            results.push_back(run_stage(stage, resume));
            write_manifest(results);
        }
        if (!only_stage.empty() && results.empty())
            throw std::invalid_argument("unknown stage: " + only_stage);
        return results;
    }

    fs::path path(const std::string& name) const { return cfg_.run_dir / name; }
    const PipelineConfig& config() const { return cfg_; }
    const SynthesisPrompts& synthesis_prompts() const { return synth_prompts_; }
    const FilterPrompts& filter_prompts() const { return filter_prompts_; }
    const HarvestPrompts& harvest_prompts() const { return harvest_prompts_; }

private:
    PipelineConfig cfg_;
    std::vector<std::string> warnings_;
    std::shared_ptr<ChatProvider> llm_;
    std::shared_ptr<HashEmbedProvider> embed_;
    PriceTable prices_;
    EnvContext env_;
    SynthesisPrompts synth_prompts_;
    FilterPrompts filter_prompts_;
    HarvestPrompts harvest_prompts_;
    std::string instruction_example_;

    std::string asset(const std::string& rel) const {
        return detail::read_file(cfg_.assets_dir / rel);
    }

    void load_prompts() {
        synth_prompts_.instruction_generation = asset("prompts/instruction_generation.txt");
        synth_prompts_.slot_fill = asset("prompts/slot_fill.txt");
        synth_prompts_.evolution = asset("prompts/evolution.txt");
        synth_prompts_.function_call = asset("prompts/function_call.txt");
        synth_prompts_.summarizer = asset("prompts/summarizer.txt");
        filter_prompts_.invocation_judge = asset("prompts/invocation_judge.txt");
        filter_prompts_.quality = asset("prompts/quality_filter.txt");
        filter_prompts_.trajectory_judge = asset("prompts/trajectory_judge.txt");
        harvest_prompts_.list_collection = asset("prompts/list_collection.txt");
        harvest_prompts_.config_extraction = asset("prompts/config_extraction.txt");
        instruction_example_ = asset("prompts/instruction_example.txt");
    }

    std::string digest_files(const std::vector<fs::path>& paths) const {
        detail::Sha256 h;
        for (const auto& p : paths) {
            h.update(p.filename().string());
            if (fs::exists(p)) h.update(detail::read_file(p));
        }
        auto d = h.digest();
        static const char* hex = "0123456789abcdef";
        std::string out;
        for (uint8_t b : d) {
            out.push_back(hex[b >> 4]);
            out.push_back(hex[b & 0xf]);
        }
        return out;
    }

    StageResult run_stage(const std::string& stage, bool resume) {
        auto inputs = stage_inputs(stage);
        std::string input_digest = digest_files(inputs) + "|seed=" + std::to_string(cfg_.seed);
        fs::path ckpt = cfg_.run_dir / "checkpoints" / (stage + ".json");
        if (resume && fs::exists(ckpt)) {
            json prior = json::parse(detail::read_file(ckpt));
            if (prior.value("input_digest", "") == input_digest)
                return {stage, "cached", "inputs unchanged"};
        }

        StageResult result{stage, "done", ""};
        if (stage == "harvest") result = stage_harvest();
        else if (stage == "ingest") result = stage_ingest();
        else if (stage == "dedupe") result = stage_dedupe();
        else if (stage == "probe") result = stage_probe();
        else if (stage == "synth") result = stage_synth();
        else if (stage == "filter") result = stage_filter();
        else if (stage == "split") result = stage_split();
        else if (stage == "export") result = stage_export();
        else if (stage == "index") result = stage_index();

        if (result.status == "done") {
            json c{{"stage", stage},
                   {"input_digest", input_digest},
                   {"output_digest", digest_files(stage_outputs(stage))}};
            detail::write_file(ckpt, detail::stable_dump(c));
        }
        return result;
    }

    std::vector<fs::path> stage_inputs(const std::string& stage) const {
        if (stage == "ingest") {
            std::vector<fs::path> in;
            for (const auto& s : cfg_.ingest_sources) in.push_back(s.path);
            return in;
        }
        if (stage == "dedupe") return {path("catalog_raw.json")};
        if (stage == "probe") return {path("catalog.json")};
        if (stage == "synth") return {path("catalog_probed.json")};
        if (stage == "filter") return {path("samples.jsonl"), path("trajectories.jsonl")};
        if (stage == "split") return {path("samples_kept.jsonl"), path("catalog_probed.json")};
        if (stage == "export") return {path("samples_kept.jsonl"), path("split.json")};
        if (stage == "index") return {path("samples_kept.jsonl"), path("split.json")};
        return {};
    }

    std::vector<fs::path> stage_outputs(const std::string& stage) const {
        if (stage == "ingest") return {path("catalog_raw.json")};
        if (stage == "dedupe") return {path("catalog.json")};
        if (stage == "probe") return {path("catalog_probed.json")};
        if (stage == "synth") return {path("samples.jsonl"), path("trajectories.jsonl")};
        if (stage == "filter") return {path("samples_kept.jsonl")};
        if (stage == "split") return {path("split.json")};
        if (stage == "export")
            return {path("export/train.jsonl"), path("export/seen_test.jsonl"),
                    path("export/unseen_tool.jsonl"), path("export/unseen_server.jsonl")};
        if (stage == "index") return {path("index.json")};
        return {};
    }

    StageResult stage_harvest() {
        // Live crawling needs a browsing MCP server and real credentials;
        // desk-scale runs start from ingest exports instead.
        return {"harvest", "skipped", "no crawl targets configured"};
    }

    StageResult stage_ingest() {
        if (cfg_.ingest_sources.empty())
            return {"ingest", "skipped", "no ingest sources configured"};
        Catalog catalog;
        json prov = json::array();
        int accepted = 0, deferred = 0, rejected = 0;
        for (const auto& src : cfg_.ingest_sources) {
            std::string raw = detail::read_file(src.path);
            IngestResult res = ingest(raw, src.marketplace);
            for (auto& r : res.records) catalog.records[r.id] = std::move(r);
            accepted += res.report.accepted;
            deferred += res.report.deferred;
            rejected += res.report.rejected;
            prov.push_back({{"path", src.path},
                            {"marketplace", to_string(src.marketplace)},
                            {"digest", detail::sha256_hex(raw)}});
        }
        catalog.provenance = json{{"sources", prov}};
        persist(catalog, path("catalog_raw.json"));
        return {"ingest", "done",
                "accepted=" + std::to_string(accepted) + " deferred=" + std::to_string(deferred) +
                    " rejected=" + std::to_string(rejected)};
    }

    StageResult stage_dedupe() {
        Catalog catalog = load_catalog(path("catalog_raw.json"));
        auto [deduped, report] = deduplicate(catalog);
        persist(deduped, path("catalog.json"));
        json merges = json::array();
        for (const auto& m : report.merges) {
            json aliases = json::array();
            for (const auto& a : m.merged)
                aliases.push_back(to_string(a.marketplace) + "/" + a.name);
            merges.push_back({{"fingerprint", m.fingerprint},
                              {"survivor", to_string(m.survivor.marketplace) + "/" + m.survivor.name},
                              {"merged", aliases}});
        }
        detail::write_file(path("dedup_report.json"), detail::stable_dump(json{{"merges", merges}}));
        return {"dedupe", "done", std::to_string(report.merges.size()) + " merges"};
    }

    StageResult stage_probe() {
        Catalog catalog = load_catalog(path("catalog.json"));
        Catalog probed;
        probed.provenance = catalog.provenance;
        int ok = 0, failed = 0;
        for (auto& [id, rec] : catalog.records) {
            ServerRecord r = rec;
            if (r.launch && r.launch->transport == Transport::stdio) {
                try {
                    Session session = Session::connect(*r.launch);
                    r.tools = session.list_tools();
                    r.available = true;
                    r.id = record_id(r);
                    session.close();
                    ++ok;
                } catch (const ClientError&) {
                    r.available = false;
                    ++failed;
                }
            }
            categorize(r, *llm_, model(cfg_.quality_judge_model));
            probed.records[r.id] = std::move(r);
        }
        // Probing can reveal duplicates that listings hid.
        auto [deduped, report] = deduplicate(probed);
        persist(deduped, path("catalog_probed.json"));
        return {"probe", "done",
                "available=" + std::to_string(ok) + " failed=" + std::to_string(failed) +
                    " post-probe merges=" + std::to_string(report.merges.size())};
    }

    StageResult stage_synth() {
        Catalog catalog = load_catalog(path("catalog_probed.json"));
        std::string samples_out, trajectories_out;
        size_t n_samples = 0;
        for (const auto& [id, rec] : catalog.records) {
            if (!rec.available || !rec.launch) continue;
            std::optional<Session> session;
            try {
                session.emplace(Session::connect(*rec.launch));
            } catch (const ClientError&) {
                continue;
            }
            for (const auto& tool : rec.tools) {
                GenerationBatch batch;
                try {
                    batch = generate_instructions(rec, tool, *llm_,
                                                  model(cfg_.generation_model), cfg_.seed,
                                                  synth_prompts_, instruction_example_,
                                                  cfg_.instructions_per_tool);
                } catch (const SynthesisError&) {
                    continue;
                }
                int idx = 0;
                for (auto& draft : batch.drafts) {
                    InstructionDraft d = slot_fill(draft, rec, tool, env_, *llm_,
                                                   model(cfg_.generation_model), synth_prompts_);
                    d = placeholder_scrub(d, env_);
                    d = evolve(d, *llm_, model(cfg_.generation_model), synth_prompts_,
                               cfg_.evolution_depth);
                    GeneratedCall call;
                    try {
                        call = generate_function_call(d, tool, *llm_,
                                                      model(cfg_.generation_model),
                                                      synth_prompts_);
                    } catch (const SynthesisError&) {
                        continue;
                    }
                    std::string sample_id = rec.id.substr(0, 12) + "-" + tool.name + "-" +
                                            std::to_string(idx++);
                    Sample s = Sample::make(sample_id, d.text, rec.id, tool, call.call,
                                            rec.marketplace, cfg_.seed);
                    s.lineage = d.lineage;
                    if (!call.schema_ok) {
                        json v = json::array();
                        for (const auto& viol : call.violations) v.push_back(viol);
                        s.filter_verdicts["schema"] = json{{"keep", false}, {"violations", v}};
                    }
                    Trajectory t = collect_trajectory(s, *session, *llm_,
                                                      model(cfg_.summarizer_model),
                                                      synth_prompts_);
                    samples_out += s.to_json().dump() + "\n";
                    trajectories_out += t.to_json().dump() + "\n";
                    ++n_samples;
                }
            }
            session->close();
        }
        detail::write_file(path("samples.jsonl"), samples_out);
        detail::write_file(path("trajectories.jsonl"), trajectories_out);
        return {"synth", "done", std::to_string(n_samples) + " samples"};
    }

    std::vector<Sample> read_samples(const fs::path& p) const {
        std::vector<Sample> out;
        std::istringstream in(detail::read_file(p));
        for (std::string line; std::getline(in, line);) {
            if (detail::trim(line).empty()) continue;
            out.push_back(Sample::from_json(json::parse(line)));
        }
        return out;
    }

    StageResult stage_filter() {
        std::vector<Sample> samples = read_samples(path("samples.jsonl"));
        std::map<std::string, Trajectory> trajectories;
        {
            std::istringstream in(detail::read_file(path("trajectories.jsonl")));
            for (std::string line; std::getline(in, line);) {
                if (detail::trim(line).empty()) continue;
                json j = json::parse(line);
                Trajectory t;
                t.sample_id = j.at("sample_id").get<std::string>();
                for (const auto& m : j.at("messages")) {
                    ChatMessage msg;
                    std::string role = m.at("role").get<std::string>();
                    msg.role = role == "system" ? Role::system
                               : role == "assistant" ? Role::assistant
                               : role == "tool" ? Role::tool
                                                : Role::user;
                    msg.content = m.value("content", "");
                    msg.tool_name = m.value("tool_name", "");
                    t.messages.push_back(std::move(msg));
                }
                t.tool_result.is_error = j.value("is_error", false);
                t.tool_result.transport_failure = j.value("transport_failure", false);
                trajectories[t.sample_id] = std::move(t);
            }
        }
        // Samples already carrying a schema violation are dropped up front.
        std::vector<Sample> eligible;
        size_t schema_drops = 0;
        for (auto& s : samples) {
            if (s.filter_verdicts.count("schema")) ++schema_drops;
            else eligible.push_back(std::move(s));
        }
        FilterContext ctx;
        ctx.embed = embed_.get();
        judge_specs_.clear();
        for (const auto& jm : cfg_.judge_models)
            judge_specs_.push_back({llm_.get(), model(jm)});
        ctx.invocation_judges = judge_specs_;
        ctx.quality_judge = {llm_.get(), model(cfg_.quality_judge_model)};
        ctx.trajectory_judge = {llm_.get(), model(cfg_.quality_judge_model)};
        ctx.prompts = filter_prompts_;
        ctx.similarity_threshold = cfg_.similarity_threshold;
        ctx.quality_threshold = cfg_.quality_threshold;
        ctx.seed = cfg_.seed;
        ctx.trajectories = &trajectories;
        FilterOutcome outcome = run_filters(std::move(eligible), ctx);

        std::string out;
        for (const auto& s : outcome.kept) out += s.to_json().dump() + "\n";
        detail::write_file(path("samples_kept.jsonl"), out);
        json report = outcome.report.to_json();
        report["schema_violation_drops"] = schema_drops;
        detail::write_file(path("filter_report.json"), detail::stable_dump(report));
        return {"filter", "done",
                std::to_string(outcome.kept.size()) + "/" + std::to_string(samples.size()) +
                    " kept"};
    }

    StageResult stage_split() {
        Catalog catalog = load_catalog(path("catalog_probed.json"));
        std::vector<Sample> samples = read_samples(path("samples_kept.jsonl"));
        SplitAssignment a = split_dataset(catalog, samples, cfg_.seed);
        detail::write_file(path("split.json"), detail::stable_dump(a.to_json()));
        return {"split", "done", std::to_string(a.sample_splits.size()) + " samples assigned"};
    }

    StageResult stage_export() {
        std::vector<Sample> samples = read_samples(path("samples_kept.jsonl"));
        SplitAssignment a =
            SplitAssignment::from_json(json::parse(detail::read_file(path("split.json"))));
        std::vector<ToolSpec> seen_pool;
        std::set<std::string> seen_names;
        for (const auto& s : samples) {
            Split sp = a.of(s.id);
            if ((sp == Split::train || sp == Split::seen_test) &&
                !seen_names.count(s.gt_tool.name)) {
                seen_pool.push_back(s.gt_tool);
                seen_names.insert(s.gt_tool.name);
            }
        }
        std::map<Split, std::vector<AssembledExample>> by_split;
        for (const auto& s : samples) {
            Split sp = a.of(s.id);
            by_split[sp].push_back(assemble_example(s, sp, seen_pool, cfg_.tool_size, cfg_.seed));
        }
        fs::create_directories(path("export"));
        auto write_split = [&](Split sp, const std::string& file, ExportFormat fmt) {
            std::string body = export_examples(by_split[sp], fmt);
            detail::write_file(path("export/" + file), body);
        };
        write_split(Split::train, "train.jsonl", ExportFormat::train_conversations);
        write_split(Split::seen_test, "seen_test.jsonl", ExportFormat::eval_records);
        write_split(Split::unseen_tool, "unseen_tool.jsonl", ExportFormat::eval_records);
        write_split(Split::unseen_server, "unseen_server.jsonl", ExportFormat::eval_records);
        return {"export", "done", ""};
    }

    StageResult stage_index() {
        std::vector<Sample> samples = read_samples(path("samples_kept.jsonl"));
        SplitAssignment a =
            SplitAssignment::from_json(json::parse(detail::read_file(path("split.json"))));
        std::vector<Sample> train;
        for (const auto& s : samples)
            if (a.of(s.id) == Split::train) train.push_back(s);
        RetrievalIndex idx = build_index(train, a, *embed_, "hash-" +
                                                              std::to_string(cfg_.embed_dimension) +
                                                              "-" + std::to_string(cfg_.embed_seed));
        detail::write_file(path("index.json"), detail::stable_dump(idx.to_json()));
        return {"index", "done", std::to_string(idx.entries.size()) + " entries"};
    }

    void write_manifest(const std::vector<StageResult>& results) {
        json stages = json::object();
        fs::path manifest = path("manifest.json");
        if (fs::exists(manifest))
            stages = json::parse(detail::read_file(manifest)).value("stages", json::object());
        for (const auto& r : results)
            stages[r.stage] = json{{"status", r.status}, {"detail", r.detail}};
        detail::write_file(manifest,
                           detail::stable_dump(json{{"seed", cfg_.seed}, {"stages", stages}}));
    }

    std::vector<JudgeSpec> judge_specs_;
};

}  // namespace mcpflow
