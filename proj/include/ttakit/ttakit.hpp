// Umbrella header.
#pragma once

#include "ttakit/config.hpp"
#include "ttakit/core.hpp"
#include "ttakit/experiment.hpp"
#include "ttakit/gradcheck.hpp"
#include "ttakit/metrics.hpp"
#include "ttakit/model.hpp"
#include "ttakit/serialize.hpp"
#include "ttakit/streams.hpp"
#include "ttakit/tta.hpp"
