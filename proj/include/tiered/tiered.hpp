#pragma once

#include "basis.hpp"
#include "benchmark.hpp"
#include "bounds.hpp"
#include "errors.hpp"
#include "gaussian.hpp"
#include "inference.hpp"
#include "nuisance.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "simulation.hpp"
#include "stabilized.hpp"
#include "table.hpp"
#include "version.hpp"
#include "witness.hpp"
