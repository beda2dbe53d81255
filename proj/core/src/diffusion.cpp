#include "hdae/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hdae {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.sizes().equals(b.sizes())) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

// x_prev = scale * x_t + eps_coef * eps for the DDIM update t -> t_prev.
struct StepCoefficients {
    double scale;
    double eps_coef;
};

StepCoefficients step_coefficients(int64_t t, int64_t t_prev, const NoiseSchedule& schedule) {
    if (t_prev >= t) {
        throw std::invalid_argument("ddim step requires t_prev < t");
    }
    const double ab_t = schedule.alpha_bar(t);
    const double ab_p = schedule.alpha_bar(t_prev);
    return {std::sqrt(ab_p / ab_t), std::sqrt(1.0 - ab_p) - std::sqrt(ab_p * (1.0 - ab_t) / ab_t)};
}

} // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) {
        throw std::invalid_argument("noise schedule needs at least one step");
    }
    alpha_bars_.reserve(betas_.size() + 1);
    alpha_bars_.push_back(1.0);
    for (double b : betas_) {
        if (!(b > 0.0 && b < 1.0)) {
            throw std::invalid_argument("noise schedule betas must lie in (0, 1)");
        }
        alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
    }
}

NoiseSchedule NoiseSchedule::linear(int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) {
        throw std::invalid_argument("noise schedule step count must be >= 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("linear schedule requires 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<size_t>(steps));
    for (int64_t i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[static_cast<size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule make_linear_schedule(int64_t steps, double beta_start, double beta_end) {
    return NoiseSchedule::linear(steps, beta_start, beta_end);
}

double NoiseSchedule::beta(int64_t t) const {
    if (t < 1 || t > steps()) {
        throw std::out_of_range("beta index out of range");
    }
    return betas_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    if (t < 0 || t > steps()) {
        throw std::out_of_range("alpha_bar index " + std::to_string(t) + " out of range");
    }
    return alpha_bars_[static_cast<size_t>(t)];
}

torch::Tensor NoiseSchedule::sqrt_alpha_bars() const {
    return torch::tensor(alpha_bars_, torch::kFloat64).sqrt();
}

torch::Tensor NoiseSchedule::sqrt_one_minus_alpha_bars() const {
    return (1.0 - torch::tensor(alpha_bars_, torch::kFloat64)).sqrt();
}

StepPlan::StepPlan(std::vector<int64_t> timesteps) : timesteps_(std::move(timesteps)) {
    if (timesteps_.empty()) {
        throw std::invalid_argument("step plan must not be empty");
    }
    if (timesteps_.back() < 1) {
        throw std::invalid_argument("step plan entries must be >= 1");
    }
    for (size_t i = 1; i < timesteps_.size(); ++i) {
        if (timesteps_[i] >= timesteps_[i - 1]) {
            throw std::invalid_argument("step plan must be strictly decreasing");
        }
    }
}

StepPlan StepPlan::strided(int64_t total_steps, int64_t count) {
    if (count < 1 || count > total_steps) {
        throw std::invalid_argument("step plan length must be in [1, T]");
    }
    std::vector<int64_t> ts(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        ts[static_cast<size_t>(i)] = total_steps - (i * total_steps) / count;
    }
    return StepPlan(std::move(ts));
}

ImageTensor q_sample(const ImageTensor& x0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample");
    const double ab = schedule.alpha_bar(t);
    return x0 * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

ImageTensor q_sample(const ImageTensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                     const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample");
    if (t.dim() != 1 || t.size(0) != x0.size(0)) {
        throw std::invalid_argument("q_sample: need one step per sample");
    }
    if (t.min().item<int64_t>() < 0 || t.max().item<int64_t>() > schedule.steps()) {
        throw std::out_of_range("q_sample: step out of range");
    }
    std::vector<int64_t> bshape(static_cast<size_t>(x0.dim()), 1);
    bshape[0] = x0.size(0);
    const auto idx = t.to(torch::kCPU, torch::kLong);
    auto a = schedule.sqrt_alpha_bars().index_select(0, idx).to(x0.options()).view(bshape);
    auto s = schedule.sqrt_one_minus_alpha_bars().index_select(0, idx).to(x0.options()).view(bshape);
    return a * x0 + s * eps;
}

ImageTensor ddim_step(const ImageTensor& x_t, const torch::Tensor& eps_pred, int64_t t, int64_t t_prev,
                      const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_pred, "ddim_step");
    const auto c = step_coefficients(t, t_prev, schedule);
    return x_t * c.scale + eps_pred * c.eps_coef;
}

ImageTensor ddim_invert_step(const ImageTensor& x_tprev, const torch::Tensor& eps_pred, int64_t t_prev, int64_t t,
                             const NoiseSchedule& schedule) {
    require_same_shape(x_tprev, eps_pred, "ddim_invert_step");
    const auto c = step_coefficients(t, t_prev, schedule);
    return (x_tprev - eps_pred * c.eps_coef) / c.scale;
}

torch::Tensor noise_loss(const torch::Tensor& eps, const torch::Tensor& eps_pred) {
    require_same_shape(eps, eps_pred, "noise_loss");
    return (eps - eps_pred).pow(2).mean();
}

torch::Tensor ddim_sample(const EpsFn& eps_fn, const torch::Tensor& x_T, const StepPlan& plan,
                          const NoiseSchedule& schedule, bool clip_output) {
    if (plan.timesteps().front() > schedule.steps()) {
        throw std::invalid_argument("step plan exceeds schedule length");
    }
    torch::NoGradGuard no_grad;
    torch::Tensor x = x_T;
    const auto& ts = plan.timesteps();
    for (size_t i = 0; i < ts.size(); ++i) {
        x = ddim_step(x, eps_fn(x, ts[i]), ts[i], plan.next(i), schedule);
    }
    return clip_output ? x.clamp(-1.0, 1.0) : x;
}

torch::Tensor ddim_invert(const EpsFn& eps_fn, const torch::Tensor& x_0, const StepPlan& plan,
                          const NoiseSchedule& schedule) {
    if (plan.timesteps().front() > schedule.steps()) {
        throw std::invalid_argument("step plan exceeds schedule length");
    }
    torch::NoGradGuard no_grad;
    torch::Tensor x = x_0;
    const auto& ts = plan.timesteps();
    for (size_t i = ts.size(); i-- > 0;) {
        x = ddim_invert_step(x, eps_fn(x, ts[i]), plan.next(i), ts[i], schedule);
    }
    return x;
}

ImageTensor generate(const NoisePredictor& model, const HierarchicalCode& code, const StochasticCode& x_T,
                     const StepPlan& plan, const NoiseSchedule& schedule) {
    return ddim_sample([&](const torch::Tensor& x, int64_t t) { return model(x, t, code); }, x_T, plan, schedule);
}

StochasticCode encode_stochastic(const NoisePredictor& model, const ImageTensor& x0, const HierarchicalCode& code,
                                 const StepPlan& plan, const NoiseSchedule& schedule) {
    return ddim_invert([&](const torch::Tensor& x, int64_t t) { return model(x, t, code); }, x0, plan, schedule);
}

} // namespace hdae
