#pragma once

#include "memtier/attribution.hpp"
#include "memtier/benchmark.hpp"
#include "memtier/config.hpp"
#include "memtier/consolidation.hpp"
#include "memtier/dataset.hpp"
#include "memtier/errors.hpp"
#include "memtier/learning.hpp"
#include "memtier/lexical.hpp"
#include "memtier/metrics.hpp"
#include "memtier/reader.hpp"
#include "memtier/retrieval.hpp"
#include "memtier/scoring.hpp"
#include "memtier/store.hpp"
#include "memtier/time.hpp"
