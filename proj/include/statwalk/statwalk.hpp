#pragma once

#include "statwalk/core.hpp"
#include "statwalk/algebra.hpp"
#include "statwalk/measure.hpp"
#include "statwalk/serialize.hpp"
#include "statwalk/walk.hpp"
#include "statwalk/stationary.hpp"
#include "statwalk/entropy.hpp"
#include "statwalk/joinings.hpp"
#include "statwalk/structure.hpp"
#include "statwalk/recurrence.hpp"
