#pragma once

#include "ipformer/align.hpp"
#include "ipformer/config.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ipf {

struct GradCheckEntry {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return error < tolerance; }
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kAlignGradTolerance = 1e-4;
inline constexpr double kOpGradTolerance = 1e-6;

/// D = 8, two heads, two frames of 2x2 patches + class token, X = 1, V = 2,
/// so six queries attend over ten keys.
PipelineConfig micro_config();

/// Finite-difference checks of every alignment parameter under a sum loss and
/// the reconstruction loss. Unless `micro_only`, the individual tape ops are
/// checked on random 3x4 inputs as well.
std::vector<GradCheckEntry> run_gradchecks(bool micro_only, std::uint64_t seed = 1);

/// Small config used by the reconstruction toy-fit.
PipelineConfig toy_config();

struct ToyFitResult {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> history; ///< loss before each step, then the final loss
    AlignParams<double> params;
};

/// Plain gradient descent on mean((align_forward(slice, anchors) - anchors)^2)
/// for a fixed synthetic slice; `seed` drives parameter init.
ToyFitResult toy_fit(int steps, double lr, std::uint64_t seed = 0);

} // namespace ipf
