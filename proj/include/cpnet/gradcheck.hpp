// Copyright 2026 The cpnet Authors. All Rights Reserved.
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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cpnet/autograd.hpp"

namespace cpnet {

// A differentiable float64 computation with its perturbable leaves. build()
// records a fresh graph that reads the current leaf values and returns a
// scalar (non-scalar op outputs are reduced with fixed random weights).
struct GradCheckCase {
  std::string name;
  std::vector<Parameter<double>*> leaves;
  std::function<Var<double>(Graph<double>&)> build;
  // Keeps leaves, modules and fixtures alive.
  std::shared_ptr<void> storage;
};

// Every recorded op, in a fixed order. Names are stable CLI identifiers.
std::vector<std::string> grad_check_op_names();
GradCheckCase make_grad_check_case(const std::string& name, uint64_t seed = 7);
// Toy CPNet total loss on a 16x16 input, widths 4/8/8/8/4, C1 = 8, 3 classes.
GradCheckCase make_full_model_case(uint64_t seed = 7);

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Entries per leaf that are checked; 0 checks all of them.
  int64_t max_entries_per_leaf = 0;
  uint64_t seed = 11;
};

struct GradCheckReport {
  std::string name;
  int64_t entries = 0;
  double max_rel_error = 0.0;
  std::string worst_leaf;
  int64_t worst_index = -1;
  bool passed = false;
};

// Relative error |a - n| / max(|a|, |n|, 1e-8).
double grad_rel_error(double analytic, double numeric);

// Analytic gradients from one backward pass against central differences
// (f(x+h) - f(x-h)) / 2h for each selected leaf entry.
GradCheckReport run_grad_check(GradCheckCase& c, const GradCheckOptions& opts = {});

}  // namespace cpnet
