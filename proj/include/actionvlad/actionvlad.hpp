#pragma once

#include "actionvlad/aggregation.hpp"
#include "actionvlad/classifier.hpp"
#include "actionvlad/codebook.hpp"
#include "actionvlad/error.hpp"
#include "actionvlad/experiment.hpp"
#include "actionvlad/feature_map.hpp"
#include "actionvlad/fusion.hpp"
#include "actionvlad/io.hpp"
#include "actionvlad/parallel.hpp"
#include "actionvlad/report.hpp"
#include "actionvlad/synth.hpp"
#include "actionvlad/training.hpp"
