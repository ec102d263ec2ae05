#pragma once

#include "slidelm/adapt/calibration.hpp"
#include "slidelm/adapt/cox.hpp"
#include "slidelm/adapt/probe.hpp"
#include "slidelm/config.hpp"
#include "slidelm/corpus/generate.hpp"
#include "slidelm/corpus/io.hpp"
#include "slidelm/encoder.hpp"
#include "slidelm/evaluate.hpp"
#include "slidelm/gradcheck.hpp"
#include "slidelm/langmodel.hpp"
#include "slidelm/losses.hpp"
#include "slidelm/metrics.hpp"
#include "slidelm/model.hpp"
#include "slidelm/optim.hpp"
#include "slidelm/packer.hpp"
#include "slidelm/predict.hpp"
#include "slidelm/report.hpp"
#include "slidelm/stats.hpp"
#include "slidelm/trainer.hpp"
