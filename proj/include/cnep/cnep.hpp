#pragma once

#include "cnep/bench.hpp"
#include "cnep/checkpoint.hpp"
#include "cnep/config.hpp"
#include "cnep/dataset_io.hpp"
#include "cnep/errors.hpp"
#include "cnep/generators.hpp"
#include "cnep/geometry.hpp"
#include "cnep/losses.hpp"
#include "cnep/metrics.hpp"
#include "cnep/model_cnep.hpp"
#include "cnep/model_cnmp.hpp"
#include "cnep/nn.hpp"
#include "cnep/optimizer.hpp"
#include "cnep/pid.hpp"
#include "cnep/rng.hpp"
#include "cnep/stats.hpp"
#include "cnep/trainer.hpp"
#include "cnep/trajectory.hpp"
