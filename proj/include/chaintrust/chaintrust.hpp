#pragma once

#include "chaintrust/agents.hpp"
#include "chaintrust/core.hpp"
#include "chaintrust/harness.hpp"
#include "chaintrust/hypergraph.hpp"
#include "chaintrust/remote.hpp"
#include "chaintrust/rng.hpp"
#include "chaintrust/semantics.hpp"
#include "chaintrust/simnet.hpp"
