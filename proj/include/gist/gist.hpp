#pragma once

#include "gist/cluster.hpp"
#include "gist/data.hpp"
#include "gist/graph.hpp"
#include "gist/model.hpp"
#include "gist/orchestrator.hpp"
#include "gist/partition.hpp"
#include "gist/random.hpp"
#include "gist/tensor.hpp"
#include "gist/theory.hpp"
