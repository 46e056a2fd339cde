#include <catch2/catch_amalgamated.hpp>
#include "mcpflow/mcpflow.hpp"
