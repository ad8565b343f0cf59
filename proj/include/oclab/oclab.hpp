#pragma once

#include "core.hpp"
#include "hard_instances.hpp"
#include "minimizers.hpp"
#include "optimizers.hpp"
#include "adversary.hpp"
#include "verify.hpp"
#include "io.hpp"
#include "bench.hpp"
