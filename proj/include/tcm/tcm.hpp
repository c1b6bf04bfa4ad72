#ifndef TCM_TCM_HPP
#define TCM_TCM_HPP

#include "centroid.hpp"
#include "error.hpp"
#include "flow_io.hpp"
#include "grid.hpp"
#include "image_io.hpp"
#include "nltv.hpp"
#include "optical_flow.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "turbulence_sim.hpp"

#endif
