#pragma once

#include "falsecite/activation.hpp"
#include "falsecite/chat.hpp"
#include "falsecite/citation.hpp"
#include "falsecite/cluster.hpp"
#include "falsecite/config.hpp"
#include "falsecite/corpus.hpp"
#include "falsecite/dump.hpp"
#include "falsecite/embedding.hpp"
#include "falsecite/error.hpp"
#include "falsecite/harness.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/http.hpp"
#include "falsecite/io.hpp"
#include "falsecite/manifest.hpp"
#include "falsecite/parallel.hpp"
#include "falsecite/rng.hpp"
#include "falsecite/text.hpp"
