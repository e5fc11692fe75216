// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/numerics/autodiff.h"

#include <algorithm>
#include <cmath>

namespace recfound {

double GradCheckReport::max_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

void note_grad_entry(GradCheckEntry& entry, std::size_t index, double analytic, double numeric) {
  const double err = grad_rel_error(analytic, numeric);
  if (index == 0 || err > entry.max_rel_error) {
    entry.max_rel_error = err;
    entry.worst_index = index;
    entry.analytic = analytic;
    entry.numeric = numeric;
  }
}

}  // namespace recfound
