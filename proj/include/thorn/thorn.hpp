#pragma once

#include "thorn/checkpoint.hpp"
#include "thorn/config.hpp"
#include "thorn/encoder.hpp"
#include "thorn/harness.hpp"
#include "thorn/heads.hpp"
#include "thorn/io.hpp"
#include "thorn/layers.hpp"
#include "thorn/metrics.hpp"
#include "thorn/model.hpp"
#include "thorn/optim.hpp"
#include "thorn/orf.hpp"
#include "thorn/orr.hpp"
#include "thorn/synthdata.hpp"
#include "thorn/tensor.hpp"
