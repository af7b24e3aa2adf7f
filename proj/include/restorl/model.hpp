#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "restorl/grid.hpp"
#include "restorl/rng.hpp"
#include "restorl/schedule.hpp"

namespace restorl {

// Conditional noise-prediction network. Input is the noisy grid
// channel-concatenated with the condition grid; a sinusoidal timestep
// embedding is projected to a per-channel bias before each hidden block.
//
//   g0 = conv_in([x ; cond])
//   for each block b:  a = g + temb_bias_b ; s = silu(a) ; g = conv_b(s)
//   eps_hat = conv_out(silu(g))
//
// All convolutions are `same` with zero padding and odd kernels. The
// activation is SiLU, so every loss built on top is smooth in the
// parameters and passes finite-difference checks.
struct DenoiserArch {
  int image_channels = 1;
  int hidden_channels = 12;
  int num_blocks = 2;
  int temb_dim = 16;
  int kernel = 3;

  void validate() const;
  bool operator==(const DenoiserArch&) const = default;
};

struct ModelParams {
  DenoiserArch arch;
  std::vector<double> values;  // flat layout, see param_count()

  std::string hash() const;
};

// Closed-form parameter count for the architecture:
//   conv_in: 2C*F*k^2 + F
//   per block: (temb_dim*F + F) + (F*F*k^2 + F)
//   conv_out: F*C*k^2 + C
std::size_t param_count(const DenoiserArch& arch);

ModelParams init_model(const DenoiserArch& arch, Rng& rng);

std::vector<double> sinusoidal_embedding(int timestep, int dim);

// Saved intermediate activations for one forward pass, consumed by
// denoiser_backward.
struct DenoiserCache {
  Grid input;
  std::vector<double> temb;
  std::vector<Grid> block_pre;   // a_b, input to the activation
  std::vector<Grid> block_act;   // silu(a_b), input to the block conv
  Grid final_pre;
  Grid final_act;
};

Grid denoiser_forward(const ModelParams& params, const Grid& x, const Grid& cond,
                      int timestep, DenoiserCache* cache = nullptr);

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(eps_hat).
void denoiser_backward(const ModelParams& params, const DenoiserCache& cache,
                       const Grid& d_output, std::vector<double>& grad);

struct SftSample {
  const Grid* x0;
  const Grid* cond;
};

// Standard noise-prediction loss: per sample draws (t, eps), forms the
// noised input, and measures the mean-squared error of the prediction.
// Per-sample draws are keyed by the sample content and a base seed pulled
// from `rng`, so the batch loss does not depend on sample order.
// When `grad` is non-null the exact gradient is accumulated into it.
double sft_loss(const ModelParams& params, std::span<const SftSample> batch,
                const DiffusionSchedule& schedule, Rng& rng,
                std::vector<double>* grad = nullptr);

// Per-sample variant used by the combined objective: every sample's loss is
// scaled by its own weight before entering the total and the gradient.
double weighted_sft_loss(const ModelParams& params, std::span<const SftSample> batch,
                         std::span<const double> weights, const DiffusionSchedule& schedule,
                         Rng& rng, std::vector<double>* grad,
                         std::vector<double>* per_sample_losses = nullptr);

}  // namespace restorl
