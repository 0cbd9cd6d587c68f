#ifndef CURVD_CURVD_HPP
#define CURVD_CURVD_HPP

#include "curvature.hpp"
#include "datasets.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "report_io.hpp"

#endif // CURVD_CURVD_HPP
