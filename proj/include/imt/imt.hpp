#pragma once

#include "imt/aalen.hpp"
#include "imt/bench.hpp"
#include "imt/core.hpp"
#include "imt/cox.hpp"
#include "imt/errors.hpp"
#include "imt/io.hpp"
#include "imt/methods.hpp"
#include "imt/reproduce.hpp"
#include "imt/rng.hpp"
#include "imt/simgen.hpp"
#include "imt/types.hpp"
