#pragma once

#include "amt/bandit.hpp"
#include "amt/campaign.hpp"
#include "amt/error.hpp"
#include "amt/features.hpp"
#include "amt/hierarchy.hpp"
#include "amt/image.hpp"
#include "amt/relations.hpp"
#include "amt/report.hpp"
#include "amt/rng.hpp"
#include "amt/suite.hpp"
#include "amt/suts.hpp"
#include "amt/verdicts.hpp"
