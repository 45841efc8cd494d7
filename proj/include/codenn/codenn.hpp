#pragma once

#include "codenn/bitwidth.hpp"
#include "codenn/codebook.hpp"
#include "codenn/dataset.hpp"
#include "codenn/encoding.hpp"
#include "codenn/errors.hpp"
#include "codenn/hwcfg.hpp"
#include "codenn/hwio.hpp"
#include "codenn/model.hpp"
#include "codenn/model_io.hpp"
#include "codenn/net.hpp"
#include "codenn/sim.hpp"
#include "codenn/tensor.hpp"
#include "codenn/training.hpp"
