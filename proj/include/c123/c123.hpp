#pragma once

#include "c123/backend_spec.hpp"
#include "c123/boundary.hpp"
#include "c123/case_io.hpp"
#include "c123/config.hpp"
#include "c123/errors.hpp"
#include "c123/evalkit.hpp"
#include "c123/guidance.hpp"
#include "c123/image_io.hpp"
#include "c123/log.hpp"
#include "c123/losses.hpp"
#include "c123/raster.hpp"
#include "c123/scene.hpp"
#include "c123/schedule.hpp"
#include "c123/trainer.hpp"
#include "c123/vecmath.hpp"
#include "c123/wire.hpp"
