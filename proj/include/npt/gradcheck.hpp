#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npt/network.hpp"
#include "npt/optim.hpp"

namespace npt {

struct GradCheckOptions {
  Widths widths = Widths::desk();
  Index vertices = 12;
  Index batch = 2;
  double step = 1e-6;
  int coords_per_tensor = 6;  ///< model parameters: sampled coordinates per tensor (0 = all)
  std::uint64_t seed = 3;
  std::vector<Variant> variants{Variant::full};
};

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference checks of every primitive, the losses and each parameter
/// tensor (plus both inputs) of the model, in 64-bit precision.
std::vector<GradCheckEntry> run_grad_check_suite(const GradCheckOptions& opts);

}  // namespace npt
