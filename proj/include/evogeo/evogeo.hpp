#pragma once

// Umbrella header.
#include "evogeo/core.hpp"
#include "evogeo/cost.hpp"
#include "evogeo/error.hpp"
#include "evogeo/geodesic.hpp"
#include "evogeo/io.hpp"
#include "evogeo/parallel.hpp"
#include "evogeo/rng.hpp"
#include "evogeo/simulate.hpp"
#include "evogeo/trajectory.hpp"
#include "evogeo/validate.hpp"
