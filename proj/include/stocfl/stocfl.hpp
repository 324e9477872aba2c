#pragma once

// Convenience include for the whole library.

#include "stocfl/clustering.hpp"
#include "stocfl/config.hpp"
#include "stocfl/dataset.hpp"
#include "stocfl/error.hpp"
#include "stocfl/experiment.hpp"
#include "stocfl/federated.hpp"
#include "stocfl/metrics.hpp"
#include "stocfl/model.hpp"
#include "stocfl/rng.hpp"
