#pragma once

#include <string>

#include "mcpflow/detail/json_util.hpp"

namespace mcpflow {

using detail::json;

// A structured tool selection: {name, arguments}. Arguments are always an
// object, never a scalar.
struct FunctionCall {
    std::string name;
    json arguments = json::object();

    json to_json() const { return json{{"name", name}, {"arguments", arguments}}; }

    static FunctionCall from_json(const json& j) {
        FunctionCall c;
        c.name = j.at("name").get<std::string>();
        json args = j.value("arguments", json::object());
        c.arguments = args.is_object() ? args : json::object();
        return c;
    }

    bool operator==(const FunctionCall&) const = default;
};

}  // namespace mcpflow
