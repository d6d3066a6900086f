#pragma once

#include "ectfusion/dataio.hpp"
#include "ectfusion/diagnostics.hpp"
#include "ectfusion/distributions.hpp"
#include "ectfusion/draws.hpp"
#include "ectfusion/error.hpp"
#include "ectfusion/fit.hpp"
#include "ectfusion/kv_config.hpp"
#include "ectfusion/model.hpp"
#include "ectfusion/posterior.hpp"
#include "ectfusion/reparam.hpp"
#include "ectfusion/sampler.hpp"
#include "ectfusion/synth.hpp"
#include "ectfusion/transforms.hpp"
