#pragma once

// Everything except experiment.hpp, which additionally needs nlohmann/json.

#include "datagen.hpp"
#include "estimators.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "sampling.hpp"
#include "solvers.hpp"
#include "tensor.hpp"
#include "tensor_io.hpp"
#include "tensor_ring.hpp"
#include "trace.hpp"
