#pragma once

#include "clearmap/backproject.hpp"
#include "clearmap/clearviz.hpp"
#include "clearmap/error.hpp"
#include "clearmap/eval.hpp"
#include "clearmap/io.hpp"
#include "clearmap/kernels.hpp"
#include "clearmap/net.hpp"
#include "clearmap/parallel.hpp"
#include "clearmap/tensor.hpp"
#include "clearmap/train.hpp"
