// Pipeline command-line front end. Every pipeline stage is also reachable
// individually; file-level commands (retrieve, eval, stats, validate) work on
// run-directory artifacts.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mcpflow/mcpflow.hpp"

using namespace mcpflow;

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    bool resume = false;
    bool dry_run = false;
};

PipelineConfig load_config(const GlobalOpts& g) {
    if (g.config_path.empty())
        throw CLI::ValidationError("--config", "a pipeline config file is required");
    PipelineConfig cfg = PipelineConfig::load(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    return cfg;
}

int run_stages(const GlobalOpts& g, const std::string& stage) {
    Orchestrator orch(load_config(g));
    for (const auto& w : orch.warnings()) std::cerr << "warning: " << w << "\n";
    auto results = orch.run(stage, g.resume, g.dry_run);
    for (const auto& r : results) {
        std::cout << r.stage << ": " << r.status;
        if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
        std::cout << "\n";
    }
    return 0;
}

std::vector<Sample> read_samples_file(const std::filesystem::path& p) {
    std::vector<Sample> out;
    std::istringstream in(detail::read_file(p));
    for (std::string line; std::getline(in, line);) {
        if (detail::trim(line).empty()) continue;
        out.push_back(Sample::from_json(json::parse(line)));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCP tool-use data pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "pipeline config JSON");
    auto* seed_opt = app.add_option("--seed", g.seed, "override the config seed");
    app.add_flag("--resume", g.resume, "skip stages whose inputs are unchanged");
    app.add_flag("--dry-run", g.dry_run, "print the plan without executing");

    std::string stage_arg;
    auto* run_cmd = app.add_subcommand("run", "run the full pipeline");
    run_cmd->add_option("--stage", stage_arg, "run a single stage");
    for (const char* s : {"harvest", "ingest", "dedupe", "probe", "synth", "filter", "split",
                          "export", "index"})
        app.add_subcommand(s, std::string("run the ") + s + " stage");

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "validate the pipeline config");

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "query the exemplar index");
    std::string retrieve_query;
    size_t retrieve_k = 5;
    retrieve_cmd->add_option("--query", retrieve_query, "query text")->required();
    retrieve_cmd->add_option("-k", retrieve_k, "number of exemplars");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score model outputs against an eval export");
    std::string eval_records_path, eval_predictions_path;
    eval_cmd->add_option("--records", eval_records_path, "eval_records JSONL")->required();
    eval_cmd->add_option("--predictions", eval_predictions_path,
                         "JSON object {id: output_text}")->required();

    // server-eval
    auto* server_eval_cmd = app.add_subcommand("server-eval", "multi-dimension server scoring");
    std::string server_eval_id;
    std::string server_eval_instructions;
    server_eval_cmd->add_option("--server", server_eval_id, "server id in the probed catalog")
        ->required();
    server_eval_cmd->add_option("--instructions", server_eval_instructions,
                                "JSON array of instructions")->required();

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "dataset statistics incl. diversity");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        for (const char* s : {"harvest", "ingest", "dedupe", "probe", "synth", "filter", "split",
                              "export", "index"})
            if (app.got_subcommand(s)) return run_stages(g, s);
        if (app.got_subcommand(run_cmd)) return run_stages(g, stage_arg);

        if (app.got_subcommand(validate_cmd)) {
            PipelineConfig cfg = load_config(g);
            ConfigReport r = validate_config(cfg);
            for (const auto& e : r.errors) std::cout << "error: " << e << "\n";
            for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
            std::cout << detail::stable_dump(r.effective);
            return r.ok() ? 0 : 1;
        }

        if (app.got_subcommand(retrieve_cmd)) {
            Orchestrator orch(load_config(g));
            RetrievalIndex idx = RetrievalIndex::from_json(
                json::parse(detail::read_file(orch.path("index.json"))));
            auto hits = retrieve(idx, retrieve_query, retrieve_k, orch.embed());
            for (const auto& h : hits)
                std::cout << h.sample_id << "\t" << h.score << "\n";
            return 0;
        }

        if (app.got_subcommand(eval_cmd)) {
            std::vector<EvalRecord> records;
            std::istringstream in(detail::read_file(eval_records_path));
            for (std::string line; std::getline(in, line);) {
                if (detail::trim(line).empty()) continue;
                json j = json::parse(line);
                EvalRecord r;
                r.id = j.at("id").get<std::string>();
                r.gt_call = FunctionCall::from_json(j.at("gt_call"));
                for (const auto& t : j.value("candidate_tools", json::array())) {
                    ToolSpec ts = tool_from_json(t);
                    if (ts.name == r.gt_call.name) r.gt_tool = ts;
                }
                records.push_back(std::move(r));
            }
            json preds = json::parse(detail::read_file(eval_predictions_path));
            std::map<std::string, std::string> predictions;
            for (auto it = preds.begin(); it != preds.end(); ++it)
                predictions[it.key()] = it.value().get<std::string>();
            BatchResult result = evaluate_batch(records, predictions);
            std::cout << detail::stable_dump(result.report.to_json());
            return 0;
        }

        if (app.got_subcommand(server_eval_cmd)) {
            Orchestrator orch(load_config(g));
            Catalog catalog = load_catalog(orch.path("catalog_probed.json"));
            auto it = catalog.records.find(server_eval_id);
            if (it == catalog.records.end())
                throw std::runtime_error("server not in probed catalog: " + server_eval_id);
            const ServerRecord& server = it->second;
            std::vector<std::string> instructions;
            for (const auto& i : json::parse(detail::read_file(server_eval_instructions)))
                instructions.push_back(i.get<std::string>());
            std::string quality_prompt =
                detail::read_file(orch.config().assets_dir / "prompts/server_quality_judge.txt");
            auto agent = [&](const std::string& instruction) {
                AgentAttempt a;
                if (!server.launch) return a;
                try {
                    Session session = Session::connect(*server.launch);
                    // One-shot: generate the call for the first tool, run it.
                    if (server.tools.empty()) return a;
                    InstructionDraft d;
                    d.text = instruction;
                    d.stage = DraftStage::evolved;
                    GeneratedCall call = generate_function_call(
                        d, server.tools.front(), orch.llm(),
                        orch.model(orch.config().generation_model), orch.synthesis_prompts());
                    ToolResult r = session.call_tool(call.call.name, call.call.arguments);
                    session.close();
                    a.answer = r.text();
                    a.ok = !r.is_error;
                    a.elapsed = r.elapsed;
                    a.output_tokens = estimate_tokens(a.answer);
                } catch (const std::exception&) {
                    a.ok = false;
                }
                return a;
            };
            ServerEvalReport report =
                server_eval(server, instructions, agent, orch.llm(),
                            orch.model(orch.config().quality_judge_model), quality_prompt);
            std::cout << detail::stable_dump(report.to_json());
            return 0;
        }

        if (app.got_subcommand(stats_cmd)) {
            Orchestrator orch(load_config(g));
            std::vector<Sample> samples = read_samples_file(orch.path("samples_kept.jsonl"));
            SplitAssignment a = SplitAssignment::from_json(
                json::parse(detail::read_file(orch.path("split.json"))));
            std::map<std::string, size_t> by_split;
            for (const auto& s : samples) by_split[to_string(a.of(s.id))]++;
            json out{{"samples", samples.size()}, {"by_split", by_split}};
            if (samples.size() >= 2) {
                std::vector<std::string> instructions;
                for (const auto& s : samples) instructions.push_back(s.instruction);
                out["diversity"] =
                    diversity_stat(instructions, orch.embed(), orch.config().seed);
            }
            std::cout << detail::stable_dump(out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
