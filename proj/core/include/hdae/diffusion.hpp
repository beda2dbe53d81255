#pragma once

#include "hdae/code.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

namespace hdae {

/// Per-step noise rates and their cumulative products.
///
/// Steps are indexed 1..T for betas and 0..T for alpha bars, with
/// alpha_bar(0) == 1 exactly.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> betas);

    static NoiseSchedule linear(int64_t steps, double beta_start, double beta_end);

    int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
    double beta(int64_t t) const;
    double alpha_bar(int64_t t) const;
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    /// sqrt(alpha_bar) and sqrt(1 - alpha_bar) as [T+1] double tensors.
    torch::Tensor sqrt_alpha_bars() const;
    torch::Tensor sqrt_one_minus_alpha_bars() const;

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

NoiseSchedule make_linear_schedule(int64_t steps, double beta_start, double beta_end);

/// Strictly decreasing timesteps used at inference. Sampling walks the plan
/// and finishes at step 0; inversion walks it in reverse starting from 0.
class StepPlan {
public:
    explicit StepPlan(std::vector<int64_t> timesteps);

    /// Evenly strided plan: t_i = T - floor(i * T / count), i = 0..count-1.
    static StepPlan strided(int64_t total_steps, int64_t count);

    const std::vector<int64_t>& timesteps() const { return timesteps_; }
    int64_t size() const { return static_cast<int64_t>(timesteps_.size()); }
    /// Step that follows position i (0 after the last entry).
    int64_t next(size_t i) const { return i + 1 < timesteps_.size() ? timesteps_[i + 1] : 0; }

private:
    std::vector<int64_t> timesteps_;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
ImageTensor q_sample(const ImageTensor& x0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& schedule);
/// Batched form: t holds one step per leading-dim sample.
ImageTensor q_sample(const ImageTensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                     const NoiseSchedule& schedule);

/// Deterministic DDIM update from t to t_prev < t.
ImageTensor ddim_step(const ImageTensor& x_t, const torch::Tensor& eps_pred, int64_t t, int64_t t_prev,
                      const NoiseSchedule& schedule);
/// Exact algebraic inverse of ddim_step for the same eps_pred.
ImageTensor ddim_invert_step(const ImageTensor& x_tprev, const torch::Tensor& eps_pred, int64_t t_prev, int64_t t,
                             const NoiseSchedule& schedule);

/// Mean over all elements of (eps - eps_pred)^2.
torch::Tensor noise_loss(const torch::Tensor& eps, const torch::Tensor& eps_pred);

using EpsFn = std::function<torch::Tensor(const torch::Tensor& x_t, int64_t t)>;
using NoisePredictor =
    std::function<torch::Tensor(const torch::Tensor& x_t, int64_t t, const HierarchicalCode& code)>;

/// Runs the deterministic sampler from x_T along plan; clips only the output.
torch::Tensor ddim_sample(const EpsFn& eps_fn, const torch::Tensor& x_T, const StepPlan& plan,
                          const NoiseSchedule& schedule, bool clip_output = true);
/// Runs the sampler backwards from x_0; eps is evaluated at the destination step.
torch::Tensor ddim_invert(const EpsFn& eps_fn, const torch::Tensor& x_0, const StepPlan& plan,
                          const NoiseSchedule& schedule);

ImageTensor generate(const NoisePredictor& model, const HierarchicalCode& code, const StochasticCode& x_T,
                     const StepPlan& plan, const NoiseSchedule& schedule);
StochasticCode encode_stochastic(const NoisePredictor& model, const ImageTensor& x0, const HierarchicalCode& code,
                                 const StepPlan& plan, const NoiseSchedule& schedule);

} // namespace hdae
