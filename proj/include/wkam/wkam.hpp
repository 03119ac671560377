#pragma once

#include "wkam/error.hpp"
#include "wkam/torus_grid.hpp"
#include "wkam/parallel.hpp"
#include "wkam/hamiltonian.hpp"
#include "wkam/report.hpp"
#include "wkam/action_kernel.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/nonsmooth_calculus.hpp"
#include "wkam/dynamics.hpp"
#include "wkam/kernel_diagnostics.hpp"
#include "wkam/cut_locus.hpp"
#include "wkam/controllability.hpp"
#include "wkam/config.hpp"
#include "wkam/experiment.hpp"
