#pragma once

#include "mtcal/error.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/resample.hpp"
#include "mtcal/parallel.hpp"
#include "mtcal/inject.hpp"
#include "mtcal/rates.hpp"
#include "mtcal/procedures.hpp"
#include "mtcal/fingerprint.hpp"
#include "mtcal/calibrate.hpp"
#include "mtcal/ffjoint.hpp"
#include "mtcal/simstudy.hpp"
#include "mtcal/io.hpp"
#include "mtcal/config.hpp"
