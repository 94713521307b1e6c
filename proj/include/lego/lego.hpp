#pragma once

// Umbrella header: the full library plus the command-line front end.

#include "lego/cli.hpp"
#include "lego/common.hpp"
#include "lego/dataset.hpp"
#include "lego/downstream.hpp"
#include "lego/gradients.hpp"
#include "lego/graph.hpp"
#include "lego/io.hpp"
#include "lego/metrics.hpp"
#include "lego/pipeline.hpp"
#include "lego/spectral.hpp"
#include "lego/tangent.hpp"
