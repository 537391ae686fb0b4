#pragma once

#include "pgsnet/backbone.hpp"
#include "pgsnet/config.hpp"
#include "pgsnet/data.hpp"
#include "pgsnet/errors.hpp"
#include "pgsnet/fusion_modules.hpp"
#include "pgsnet/image.hpp"
#include "pgsnet/layers.hpp"
#include "pgsnet/losses.hpp"
#include "pgsnet/metrics.hpp"
#include "pgsnet/network.hpp"
#include "pgsnet/pipeline.hpp"
#include "pgsnet/report.hpp"
