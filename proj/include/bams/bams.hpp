#pragma once

#include "bams/bootstrap.hpp"
#include "bams/checkpoint.hpp"
#include "bams/config.hpp"
#include "bams/dataset.hpp"
#include "bams/diffcore.hpp"
#include "bams/eval.hpp"
#include "bams/features.hpp"
#include "bams/hoa.hpp"
#include "bams/model.hpp"
#include "bams/report.hpp"
#include "bams/synthdata.hpp"
#include "bams/trainer.hpp"
