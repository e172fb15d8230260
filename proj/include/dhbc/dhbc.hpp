#pragma once

#include "dhbc/errors.hpp"
#include "dhbc/matnorm.hpp"
#include "dhbc/lmm.hpp"
#include "dhbc/bpe.hpp"
#include "dhbc/cohort.hpp"
#include "dhbc/posterior.hpp"
#include "dhbc/parallel.hpp"
#include "dhbc/divisive.hpp"
#include "dhbc/data.hpp"
