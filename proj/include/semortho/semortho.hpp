#pragma once

#include "semortho/cluster.hpp"
#include "semortho/config.hpp"
#include "semortho/corpus.hpp"
#include "semortho/embed.hpp"
#include "semortho/geometry.hpp"
#include "semortho/label.hpp"
#include "semortho/optimize.hpp"
#include "semortho/pipeline.hpp"
#include "semortho/reduce.hpp"
#include "semortho/reduce/trustworthiness.hpp"
#include "semortho/report.hpp"
#include "semortho/stats.hpp"
#include "semortho/version.hpp"
