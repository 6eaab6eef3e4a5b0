#pragma once

#include "bams/diffcore/adam.hpp"
#include "bams/diffcore/grad_check.hpp"
#include "bams/diffcore/ops.hpp"
#include "bams/diffcore/parameter.hpp"
#include "bams/diffcore/tensor.hpp"
