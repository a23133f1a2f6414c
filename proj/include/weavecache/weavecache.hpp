#pragma once

#include "weavecache/config.hpp"
#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"
#include "weavecache/gate.hpp"
#include "weavecache/memory.hpp"
#include "weavecache/pipeline.hpp"
#include "weavecache/random.hpp"
#include "weavecache/retrieval.hpp"
#include "weavecache/simulator.hpp"
#include "weavecache/sope.hpp"
#include "weavecache/stream_io.hpp"
