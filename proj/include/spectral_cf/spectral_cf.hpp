#pragma once

#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"
#include "spectral_cf/losses.hpp"
#include "spectral_cf/penalties.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/model_io.hpp"
#include "spectral_cf/solver.hpp"
#include "spectral_cf/mkl.hpp"
#include "spectral_cf/data.hpp"
#include "spectral_cf/oracle.hpp"
#include "spectral_cf/certify.hpp"
#include "spectral_cf/experiment.hpp"
