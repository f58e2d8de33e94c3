#pragma once

#include "tfrd/adam.hpp"
#include "tfrd/attention.hpp"
#include "tfrd/bench.hpp"
#include "tfrd/checkpoint.hpp"
#include "tfrd/config.hpp"
#include "tfrd/decoder.hpp"
#include "tfrd/error.hpp"
#include "tfrd/gradcheck.hpp"
#include "tfrd/image_io.hpp"
#include "tfrd/metrics.hpp"
#include "tfrd/model.hpp"
#include "tfrd/ops.hpp"
#include "tfrd/params.hpp"
#include "tfrd/synthetic.hpp"
#include "tfrd/tensor.hpp"
#include "tfrd/tffm.hpp"
#include "tfrd/train.hpp"
#include "tfrd/twfem.hpp"
