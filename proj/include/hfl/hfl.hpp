#pragma once

#include "hfl/common.hpp"
#include "hfl/data.hpp"
#include "hfl/experiment.hpp"
#include "hfl/federation.hpp"
#include "hfl/metrics.hpp"
#include "hfl/nn.hpp"
#include "hfl/transport.hpp"
