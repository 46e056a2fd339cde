#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/detail/sha256.hpp"
#include "mcpflow/gateway.hpp"

namespace mcpflow {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Order matters: dedup survivor selection prefers the earliest entry.
enum class Marketplace { Smithery, Glama, MCPso, MCPHub, PipeDream, PulseMCP, Manual };

inline const std::vector<std::pair<Marketplace, std::string>>& marketplace_names() {
    static const std::vector<std::pair<Marketplace, std::string>> names = {
        {Marketplace::Smithery, "Smithery"},   {Marketplace::Glama, "Glama"},
        {Marketplace::MCPso, "MCP.so"},        {Marketplace::MCPHub, "MCPHub"},
        {Marketplace::PipeDream, "PipeDream"}, {Marketplace::PulseMCP, "PulseMCP"},
        {Marketplace::Manual, "Manual"},
    };
    return names;
}

inline std::string to_string(Marketplace m) {
    for (const auto& [tag, name] : marketplace_names())
        if (tag == m) return name;
    throw std::logic_error("unreachable marketplace tag");
}

inline Marketplace parse_marketplace(std::string_view s) {
    for (const auto& [tag, name] : marketplace_names())
        if (name == s) return tag;
    throw std::invalid_argument("unknown marketplace: " + std::string(s));
}

enum class Transport { stdio, sse };

struct LaunchSpec {
    Transport transport = Transport::stdio;
    std::string command;                      // stdio
    std::vector<std::string> args;            // stdio
    std::map<std::string, std::string> env;   // stdio
    std::string url;                          // sse

    void validate() const {
        if (transport == Transport::stdio) {
            if (command.empty()) throw std::invalid_argument("stdio launch: empty command");
            if (!url.empty()) throw std::invalid_argument("stdio launch: url must be empty");
        } else {
            if (url.find("http://") != 0 && url.find("https://") != 0)
                throw std::invalid_argument("sse launch: url must be absolute: " + url);
            if (!command.empty()) throw std::invalid_argument("sse launch: command must be empty");
        }
    }
};

struct ToolSpec {
    std::string name;
    std::string description;
    json input_schema = json::object();  // {"properties": {...}, "required": [...]}

    // Hard violations throw; soft findings (unknown types) are returned so
    // callers can flag without dropping the tool.
    std::vector<std::string> validate() const {
        static const std::set<std::string> known_types = {
            "string", "number", "integer", "boolean", "array", "object", "null"};
        if (name.empty()) throw std::invalid_argument("tool with empty name");
        std::vector<std::string> findings;
        const json props = input_schema.value("properties", json::object());
        for (const auto& req : input_schema.value("required", json::array())) {
            if (!props.contains(req.get<std::string>()))
                throw std::invalid_argument("tool " + name + ": required param '" +
                                            req.get<std::string>() + "' absent from properties");
        }
        for (auto it = props.begin(); it != props.end(); ++it) {
            if (it.value().is_object() && it.value().contains("type")) {
                std::string t = it.value()["type"].is_string()
                                    ? it.value()["type"].get<std::string>()
                                    : it.value()["type"].dump();
                if (!known_types.count(t))
                    findings.push_back("tool " + name + ": param '" + it.key() +
                                       "' has unknown type '" + t + "'");
            }
        }
        return findings;
    }

    std::vector<std::string> required_params() const {
        std::vector<std::string> out;
        for (const auto& r : input_schema.value("required", json::array()))
            out.push_back(r.get<std::string>());
        return out;
    }
};

struct Alias {
    Marketplace marketplace;
    std::string name;
    bool operator==(const Alias&) const = default;
};

struct ServerRecord {
    std::string id;  // fingerprint(tools); provisional id while tools are unknown
    std::string name;
    Marketplace marketplace = Marketplace::Manual;
    std::string description;
    std::string detail_url;
    std::optional<LaunchSpec> launch;
    std::vector<ToolSpec> tools;
    std::string category;
    bool category_retry = false;
    std::vector<Alias> aliases;
    bool available = false;
};

struct Catalog {
    std::map<std::string, ServerRecord> records;  // id -> record
    json provenance = json::object();             // ingest timestamps, source digests
};

// ---------------------------------------------------------------------------
// Fingerprint
// ---------------------------------------------------------------------------

// Digest over the sorted, whitespace-normalized tool description strings.
// Order- and name-independent: two listings with the same tool descriptions
// are the same server no matter what they are called.
inline std::string fingerprint(const std::vector<ToolSpec>& tools) {
    std::vector<std::string> descs;
    descs.reserve(tools.size());
    for (const auto& t : tools) descs.push_back(detail::normalize_ws(t.description));
    std::sort(descs.begin(), descs.end());
    detail::Sha256 h;
    bool first = true;
    for (const auto& d : descs) {
        if (!first) h.update("\x1f");  // unit separator; cannot survive normalization
        h.update(d);
        first = false;
    }
    auto d = h.digest();
    static const char* hexdig = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (uint8_t b : d) {
        out.push_back(hexdig[b >> 4]);
        out.push_back(hexdig[b & 0xf]);
    }
    return out;
}

// Records without a probed tool inventory get a provisional identity so they
// do not collapse onto the empty fingerprint.
inline std::string record_id(const ServerRecord& r) {
    if (!r.tools.empty()) return fingerprint(r.tools);
    return "pending-" + detail::sha256_hex(to_string(r.marketplace) + ":" + r.name);
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline json to_json(const LaunchSpec& l) {
    if (l.transport == Transport::sse) return json{{"url", l.url}};
    json o{{"command", l.command}, {"args", l.args}};
    if (!l.env.empty()) o["env"] = l.env;
    return o;
}

inline LaunchSpec launch_from_json(const json& j) {
    LaunchSpec l;
    if (j.contains("url")) {
        l.transport = Transport::sse;
        l.url = j["url"].get<std::string>();
    } else {
        l.transport = Transport::stdio;
        l.command = j.value("command", "");
        for (const auto& a : j.value("args", json::array())) l.args.push_back(a.get<std::string>());
        if (j.contains("env"))
            for (auto it = j["env"].begin(); it != j["env"].end(); ++it)
                l.env[it.key()] = it.value().is_string() ? it.value().get<std::string>()
                                                        : it.value().dump();
    }
    l.validate();
    return l;
}

inline json to_json(const ToolSpec& t) {
    return json{{"name", t.name}, {"description", t.description}, {"input_schema", t.input_schema}};
}

inline ToolSpec tool_from_json(const json& j) {
    ToolSpec t;
    t.name = j.at("name").get<std::string>();
    t.description = j.value("description", "");
    t.input_schema = j.value("input_schema", json::object());
    return t;
}

inline json to_json(const ServerRecord& r) {
    json aliases = json::array();
    for (const auto& a : r.aliases)
        aliases.push_back(json{{"marketplace", to_string(a.marketplace)}, {"name", a.name}});
    json tools = json::array();
    for (const auto& t : r.tools) tools.push_back(to_json(t));
    json o{{"id", r.id},
           {"name", r.name},
           {"marketplace", to_string(r.marketplace)},
           {"description", r.description},
           {"detail_url", r.detail_url},
           {"tools", tools},
           {"category", r.category},
           {"category_retry", r.category_retry},
           {"aliases", aliases},
           {"available", r.available}};
    if (r.launch) o["launch"] = to_json(*r.launch);
    return o;
}

inline ServerRecord record_from_json(const json& j) {
    ServerRecord r;
    r.id = j.at("id").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.marketplace = parse_marketplace(j.at("marketplace").get<std::string>());
    r.description = j.value("description", "");
    r.detail_url = j.value("detail_url", "");
    if (j.contains("launch")) r.launch = launch_from_json(j["launch"]);
    for (const auto& t : j.value("tools", json::array())) r.tools.push_back(tool_from_json(t));
    r.category = j.value("category", "");
    r.category_retry = j.value("category_retry", false);
    for (const auto& a : j.value("aliases", json::array()))
        r.aliases.push_back({parse_marketplace(a.at("marketplace").get<std::string>()),
                             a.at("name").get<std::string>()});
    r.available = j.value("available", false);
    return r;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

struct IngestReport {
    int accepted = 0;  // launch config present
    int deferred = 0;  // kept with available=false, no launch config
    int rejected = 0;
    std::vector<std::string> messages;
};

struct IngestResult {
    std::vector<ServerRecord> records;
    IngestReport report;
};

// Marketplace-native launch shape: {"mcpServers": {name: {command,...}|{url}}}.
inline std::optional<LaunchSpec> extract_launch(const json& listing) {
    const json* block = nullptr;
    if (listing.contains("mcpServers")) block = &listing["mcpServers"];
    else if (listing.contains("config") && listing["config"].is_object() &&
             listing["config"].contains("mcpServers"))
        block = &listing["config"]["mcpServers"];
    if (!block || !block->is_object() || block->empty()) return std::nullopt;
    const json& entry = block->begin().value();
    if (!entry.is_object()) return std::nullopt;
    if (!entry.contains("command") && !entry.contains("url")) return std::nullopt;
    try {
        return launch_from_json(entry);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

// One ServerRecord per listing. Listings without a usable launch config are
// deferred (available=false, empty tools), never silently dropped.
inline IngestResult ingest(const std::string& raw_document, Marketplace marketplace) {
    json doc;
    try {
        doc = json::parse(raw_document);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("ingest: malformed JSON at byte " + std::to_string(e.byte) +
                                 ": " + e.what());
    }
    json listings = json::array();
    if (doc.is_array()) listings = doc;
    else if (doc.is_object() && doc.contains("servers")) listings = doc["servers"];
    else if (doc.is_object()) {
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            json entry = it.value();
            if (entry.is_object() && !entry.contains("name")) entry["name"] = it.key();
            listings.push_back(entry);
        }
    }

    IngestResult result;
    for (const auto& listing : listings) {
        if (!listing.is_object() || !listing.contains("name") ||
            listing["name"].get<std::string>().empty()) {
            ++result.report.rejected;
            result.report.messages.push_back("rejected listing without a name");
            continue;
        }
        ServerRecord r;
        r.name = listing["name"].get<std::string>();
        r.marketplace = marketplace;
        r.description = listing.value("description", "");
        r.detail_url = listing.value("detail_url", listing.value("url", ""));
        r.launch = extract_launch(listing);
        if (listing.contains("tools"))
            for (const auto& t : listing["tools"]) r.tools.push_back(tool_from_json(t));
        r.aliases = {{marketplace, r.name}};
        r.available = false;
        r.id = record_id(r);
        if (r.launch) ++result.report.accepted;
        else {
            ++result.report.deferred;
            result.report.messages.push_back("deferred (no launch config): " + r.name);
        }
        result.records.push_back(std::move(r));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Deduplication
// ---------------------------------------------------------------------------

struct Merge {
    std::string fingerprint;
    Alias survivor;
    std::vector<Alias> merged;
};

struct DedupReport {
    std::vector<Merge> merges;
};

inline bool survives(const ServerRecord& a, const ServerRecord& b) {
    if (a.marketplace != b.marketplace) return int(a.marketplace) < int(b.marketplace);
    return a.name < b.name;
}

// Merge records with equal fingerprints. Survivor: earliest marketplace in
// enumeration order, then lexicographically smallest name. Records whose
// tool inventory has not been collected yet are left alone.
inline std::pair<Catalog, DedupReport> deduplicate(const Catalog& catalog) {
    Catalog out;
    out.provenance = catalog.provenance;
    DedupReport report;

    std::map<std::string, std::vector<const ServerRecord*>> by_fp;
    for (const auto& [id, rec] : catalog.records) {
        if (rec.tools.empty()) {
            out.records[id] = rec;
            continue;
        }
        by_fp[fingerprint(rec.tools)].push_back(&rec);
    }

    for (auto& [fp, group] : by_fp) {
        std::sort(group.begin(), group.end(),
                  [](const ServerRecord* a, const ServerRecord* b) { return survives(*a, *b); });
        ServerRecord merged = *group.front();
        merged.id = fp;
        Merge m{fp, {merged.marketplace, merged.name}, {}};
        for (size_t i = 1; i < group.size(); ++i) {
            for (const auto& alias : group[i]->aliases) {
                if (std::find(merged.aliases.begin(), merged.aliases.end(), alias) ==
                    merged.aliases.end())
                    merged.aliases.push_back(alias);
            }
            m.merged.push_back({group[i]->marketplace, group[i]->name});
            merged.available = merged.available || group[i]->available;
        }
        if (!m.merged.empty()) report.merges.push_back(std::move(m));
        out.records[merged.id] = std::move(merged);
    }
    return {std::move(out), std::move(report)};
}

// ---------------------------------------------------------------------------
// Categorization
// ---------------------------------------------------------------------------

// Eight labels observed in practice plus Communication and Other.
inline const std::vector<std::string>& default_taxonomy() {
    static const std::vector<std::string> t = {
        "Art & Entertainment", "File System",   "Database",           "Web Search & Data",
        "Developer Tools",     "Map & Weather", "Finance",            "Browser Automation",
        "Communication",       "Other"};
    return t;
}

// Judge output outside the taxonomy maps to Other. Provider failure leaves
// the category unset and flags the record for retry.
inline bool categorize(ServerRecord& record, ChatProvider& judge, const ModelSpec& model,
                       const std::vector<std::string>& taxonomy = default_taxonomy()) {
    std::string labels;
    for (const auto& l : taxonomy) labels += "- " + l + "\n";
    std::vector<ChatMessage> messages = {
        ChatMessage::system("Classify the MCP server into exactly one category. Reply with the "
                            "category name only.\nCategories:\n" + labels),
        ChatMessage::user("Server name: " + record.name + "\nDescription: " + record.description)};
    try {
        ChatResult r = judge.chat(model, messages, {});
        std::string label = detail::trim(r.text);
        if (std::find(taxonomy.begin(), taxonomy.end(), label) == taxonomy.end())
            label = "Other";
        record.category = label;
        record.category_retry = false;
        return true;
    } catch (const ProviderError&) {
        record.category.clear();
        record.category_retry = true;
        return false;
    }
}

// ---------------------------------------------------------------------------
// Persist / load
// ---------------------------------------------------------------------------

inline constexpr int kCatalogVersion = 1;

inline void persist(const Catalog& catalog, const std::filesystem::path& path) {
    json records = json::array();
    for (const auto& [id, rec] : catalog.records) records.push_back(to_json(rec));
    json file{{"version", kCatalogVersion},
              {"records", records},
              {"provenance", catalog.provenance}};
    detail::write_file(path, detail::stable_dump(file));
}

inline Catalog load_catalog(const std::filesystem::path& path) {
    json file = json::parse(detail::read_file(path));
    int version = file.value("version", -1);
    if (version != kCatalogVersion)
        throw std::runtime_error("catalog version mismatch: file has " + std::to_string(version) +
                                 ", expected " + std::to_string(kCatalogVersion) +
                                 "; migrate the file explicitly");
    Catalog c;
    c.provenance = file.value("provenance", json::object());
    for (const auto& rj : file.at("records")) {
        ServerRecord r = record_from_json(rj);
        std::string expect = record_id(r);
        if (r.id != expect)
            throw std::runtime_error("catalog integrity error: record '" + r.name +
                                     "' id does not match its tool fingerprint");
        if (c.records.count(r.id))
            throw std::runtime_error("catalog integrity error: duplicate fingerprint for '" +
                                     r.name + "'");
        c.records[r.id] = std::move(r);
    }
    return c;
}

}  // namespace mcpflow
