#pragma once

// Umbrella header for the hydrotrack library.

#include "hydrotrack/channel.hpp"
#include "hydrotrack/common.hpp"
#include "hydrotrack/dsp.hpp"
#include "hydrotrack/geometry.hpp"
#include "hydrotrack/init.hpp"
#include "hydrotrack/io.hpp"
#include "hydrotrack/montecarlo.hpp"
#include "hydrotrack/motion.hpp"
#include "hydrotrack/ukf.hpp"
