#pragma once

#include "lunetkit/diffcore/crop_resize.hpp"
#include "lunetkit/diffcore/gradcheck.hpp"
#include "lunetkit/diffcore/linear.hpp"
#include "lunetkit/diffcore/ops.hpp"
#include "lunetkit/diffcore/serialize.hpp"
#include "lunetkit/diffcore/tape.hpp"
#include "lunetkit/diffcore/tensor.hpp"
