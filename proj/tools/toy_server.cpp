// Self-contained MCP stdio server used as a test fixture. Speaks
// newline-delimited JSON-RPC 2.0 and declares two tools (echo, add).
//
// Flags:
//   --name <s>            serverInfo.name (default "toy-server")
//   --desc-suffix <s>     appended to every tool description (distinct
//                         fingerprints for multi-server fixtures)
//   --delay-handshake <ms> sleep before answering initialize
//   --fail-tool           also declare a "fail" tool that returns isError
//   --slow-tool           also declare a "slow" tool that sleeps 10 s
//   --garbage-frame       reply to the first tools/call with a non-JSON line
//   --paginate            serve the tool list one tool per page

#include <chrono>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

using json = nlohmann::json;

namespace {

struct Options {
    std::string name = "toy-server";
    std::string desc_suffix;
    int delay_handshake_ms = 0;
    bool fail_tool = false;
    bool slow_tool = false;
    bool garbage_frame = false;
    bool paginate = false;
};

json tool_list(const Options& opt) {
    auto desc = [&](const char* base) { return std::string(base) + opt.desc_suffix; };
    json tools = json::array();
    tools.push_back({{"name", "echo"},
                     {"description", desc("Echo back the given message.")},
                     {"inputSchema",
                      {{"type", "object"},
                       {"properties",
                        {{"msg", {{"type", "string"}, {"description", "message to echo"}}}}},
                       {"required", json::array({"msg"})}}}});
    tools.push_back({{"name", "add"},
                     {"description", desc("Add two numbers and return the sum.")},
                     {"inputSchema",
                      {{"type", "object"},
                       {"properties",
                        {{"a", {{"type", "number"}, {"description", "first addend"}}},
                         {"b", {{"type", "number"}, {"description", "second addend"}}}}},
                       {"required", json::array({"a", "b"})}}}});
    if (opt.fail_tool)
        tools.push_back({{"name", "fail"},
                         {"description", desc("Always fails.")},
                         {"inputSchema",
                          {{"type", "object"}, {"properties", json::object()},
                           {"required", json::array()}}}});
    if (opt.slow_tool)
        tools.push_back({{"name", "slow"},
                         {"description", desc("Sleeps for ten seconds.")},
                         {"inputSchema",
                          {{"type", "object"}, {"properties", json::object()},
                           {"required", json::array()}}}});
    return tools;
}

void reply(const json& id, const json& result) {
    json msg{{"jsonrpc", "2.0"}, {"id", id}, {"result", result}};
    std::cout << msg.dump() << "\n" << std::flush;
}

void reply_error(const json& id, int code, const std::string& message) {
    json msg{{"jsonrpc", "2.0"}, {"id", id}, {"error", {{"code", code}, {"message", message}}}};
    std::cout << msg.dump() << "\n" << std::flush;
}

json text_result(const std::string& text, bool is_error = false) {
    return json{{"content", json::array({{{"type", "text"}, {"text", text}}})},
                {"isError", is_error}};
}

std::string format_number(double v) {
    if (v == (long long)v) return std::to_string((long long)v);
    std::string s = std::to_string(v);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--name" && i + 1 < argc) opt.name = argv[++i];
        else if (arg == "--desc-suffix" && i + 1 < argc) opt.desc_suffix = argv[++i];
        else if (arg == "--delay-handshake" && i + 1 < argc) opt.delay_handshake_ms = std::stoi(argv[++i]);
        else if (arg == "--fail-tool") opt.fail_tool = true;
        else if (arg == "--slow-tool") opt.slow_tool = true;
        else if (arg == "--garbage-frame") opt.garbage_frame = true;
        else if (arg == "--paginate") opt.paginate = true;
    }

    json tools = tool_list(opt);
    bool garbage_pending = opt.garbage_frame;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        json msg = json::parse(line, nullptr, false);
        if (msg.is_discarded()) continue;
        std::string method = msg.value("method", "");
        json id = msg.value("id", json());

        if (method == "initialize") {
            if (opt.delay_handshake_ms > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(opt.delay_handshake_ms));
            reply(id, {{"protocolVersion", msg["params"].value("protocolVersion", "2024-11-05")},
                       {"capabilities", {{"tools", json::object()}}},
                       {"serverInfo", {{"name", opt.name}, {"version", "1.0.0"}}}});
        } else if (method == "notifications/initialized") {
            // no response to notifications
        } else if (method == "tools/list") {
            if (opt.paginate) {
                size_t cursor = 0;
                if (msg.contains("params") && msg["params"].contains("cursor"))
                    cursor = msg["params"]["cursor"].get<size_t>();
                json page = json::array({tools[cursor]});
                json result{{"tools", page}};
                if (cursor + 1 < tools.size()) result["nextCursor"] = cursor + 1;
                reply(id, result);
            } else {
                reply(id, {{"tools", tools}});
            }
        } else if (method == "tools/call") {
            if (garbage_pending) {
                garbage_pending = false;
                std::cout << "this is not a json-rpc frame\n" << std::flush;
                continue;
            }
            std::string name = msg["params"].value("name", "");
            json args = msg["params"].value("arguments", json::object());
            if (name == "echo") {
                reply(id, text_result(args.value("msg", "")));
            } else if (name == "add") {
                double a = args.value("a", 0.0), b = args.value("b", 0.0);
                reply(id, text_result(format_number(a + b)));
            } else if (name == "fail" && opt.fail_tool) {
                reply(id, text_result("Error: API key required", true));
            } else if (name == "slow" && opt.slow_tool) {
                std::this_thread::sleep_for(std::chrono::seconds(10));
                reply(id, text_result("done"));
            } else {
                reply_error(id, -32602, "unknown tool: " + name);
            }
        } else if (!id.is_null()) {
            reply_error(id, -32601, "method not found: " + method);
        }
    }
    return 0;
}
