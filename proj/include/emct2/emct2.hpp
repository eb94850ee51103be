#pragma once

// Umbrella header for the EMC T2-mapping library.

#include "emct2/config.hpp"
#include "emct2/dictionary.hpp"
#include "emct2/epg.hpp"
#include "emct2/error.hpp"
#include "emct2/eval.hpp"
#include "emct2/fitter.hpp"
#include "emct2/parallel.hpp"
#include "emct2/phantom.hpp"
#include "emct2/protocol.hpp"
#include "emct2/tensor.hpp"
