#pragma once

#include "error.hpp"
#include "util.hpp"
#include "core.hpp"
#include "grid.hpp"
#include "fft.hpp"
#include "psr.hpp"
#include "mesh.hpp"
#include "marching_cubes.hpp"
#include "spatial_hash.hpp"
#include "deform.hpp"
#include "anchoring.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "scenes.hpp"
#include "io.hpp"
#include "config.hpp"
#include "pipeline.hpp"
