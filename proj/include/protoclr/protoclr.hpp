#pragma once

// Umbrella header.

#include "protoclr/core.hpp"
#include "protoclr/costmodel.hpp"
#include "protoclr/data.hpp"
#include "protoclr/encoder.hpp"
#include "protoclr/errors.hpp"
#include "protoclr/fewshot.hpp"
#include "protoclr/losses.hpp"
#include "protoclr/parallel.hpp"
#include "protoclr/prototypes.hpp"
#include "protoclr/version.hpp"
