#pragma once

#include "sepo/backtest.hpp"
#include "sepo/baselines.hpp"
#include "sepo/common.hpp"
#include "sepo/ensemble.hpp"
#include "sepo/market_data.hpp"
#include "sepo/metrics.hpp"
#include "sepo/predictor.hpp"
#include "sepo/rng.hpp"
#include "sepo/selection.hpp"
