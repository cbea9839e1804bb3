#pragma once

#include "clusterbd/channel.hpp"
#include "clusterbd/evaluation.hpp"
#include "clusterbd/geometry.hpp"
#include "clusterbd/harness.hpp"
#include "clusterbd/linalg.hpp"
#include "clusterbd/power.hpp"
#include "clusterbd/precoding.hpp"
#include "clusterbd/random.hpp"
#include "clusterbd/scheduling.hpp"
#include "clusterbd/types.hpp"
