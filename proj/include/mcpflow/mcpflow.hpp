#pragma once

#include "mcpflow/dataset.hpp"
#include "mcpflow/evaluation.hpp"
#include "mcpflow/filtration.hpp"
#include "mcpflow/function_call.hpp"
#include "mcpflow/gateway.hpp"
#include "mcpflow/harvest.hpp"
#include "mcpflow/mcp_client.hpp"
#include "mcpflow/orchestrator.hpp"
#include "mcpflow/providers.hpp"
#include "mcpflow/registry.hpp"
#include "mcpflow/synthesis.hpp"
