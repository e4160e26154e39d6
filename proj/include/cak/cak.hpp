#pragma once

#include "cak/attention.hpp"
#include "cak/autograd.hpp"
#include "cak/band_oracle.hpp"
#include "cak/checkpoint.hpp"
#include "cak/complexity.hpp"
#include "cak/dataset.hpp"
#include "cak/export.hpp"
#include "cak/gradcheck.hpp"
#include "cak/kernel_policy.hpp"
#include "cak/network.hpp"
#include "cak/ops.hpp"
#include "cak/tensor.hpp"
#include "cak/train.hpp"
