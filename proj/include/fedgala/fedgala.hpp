#pragma once

#include "fedgala/core.hpp"
#include "fedgala/graph.hpp"
#include "fedgala/graph_io.hpp"
#include "fedgala/encoders.hpp"
#include "fedgala/alignment.hpp"
#include "fedgala/transport.hpp"
#include "fedgala/federation.hpp"
#include "fedgala/prototypes.hpp"
#include "fedgala/prompts.hpp"
#include "fedgala/harness.hpp"
