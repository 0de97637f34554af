#ifndef NLME_NLME_HPP
#define NLME_NLME_HPP

#include "nlme/datagen.hpp"
#include "nlme/diagnostics.hpp"
#include "nlme/errors.hpp"
#include "nlme/map_solver.hpp"
#include "nlme/model.hpp"
#include "nlme/proposal.hpp"
#include "nlme/random.hpp"
#include "nlme/samplers.hpp"
#include "nlme/structural.hpp"

#endif  // NLME_NLME_HPP
