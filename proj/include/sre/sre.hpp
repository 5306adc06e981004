#pragma once

#include "sre/adam.hpp"
#include "sre/checkpoint.hpp"
#include "sre/config.hpp"
#include "sre/directions.hpp"
#include "sre/metrics.hpp"
#include "sre/pixmap.hpp"
#include "sre/retrieval.hpp"
#include "sre/rng.hpp"
#include "sre/sre_net.hpp"
#include "sre/synth_world.hpp"
#include "sre/tensor.hpp"
#include "sre/trainer.hpp"
