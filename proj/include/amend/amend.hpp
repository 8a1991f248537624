// Copyright 2026 The amend Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef AMEND_AMEND_HPP_
#define AMEND_AMEND_HPP_

#include "amend/baseline_net.hpp"
#include "amend/clustering.hpp"
#include "amend/common.hpp"
#include "amend/data.hpp"
#include "amend/difficulty.hpp"
#include "amend/evaluation.hpp"
#include "amend/experts.hpp"
#include "amend/metrics.hpp"
#include "amend/nn.hpp"
#include "amend/pipeline.hpp"
#include "amend/routing.hpp"

#endif  // AMEND_AMEND_HPP_
