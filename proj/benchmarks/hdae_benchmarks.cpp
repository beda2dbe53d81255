#include "hdae/diffusion.hpp"
#include "hdae/editing.hpp"
#include "hdae/evaluation.hpp"
#include "hdae/networks.hpp"

#include <benchmark/benchmark.h>
#include <torch/torch.h>

using namespace hdae;

namespace {

// Desk configuration used by the acceptance models.
ModelConfig desk_model(Variant v) {
    ModelConfig mc;
    mc.base_width = 16;
    mc.code_dim = 128;
    mc.variant = v;
    return mc;
}

void BM_DdimStep(benchmark::State& state) {
    const auto schedule = NoiseSchedule::linear(1000, 1e-4, 0.02);
    auto x = torch::randn({state.range(0), 3, 32, 32});
    auto eps = torch::randn_like(x);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ddim_step(x, eps, 500, 490, schedule));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DdimStep)->Arg(1)->Arg(32);

void BM_PredictNoise(benchmark::State& state) {
    torch::NoGradGuard no_grad;
    const auto v = static_cast<Variant>(state.range(0));
    DiffusionAutoencoder model(desk_model(v));
    model->eval();
    auto x = torch::randn({8, 3, 32, 32});
    auto code = model->encode_semantic(x);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model->predict_noise(x, 500, code));
    }
    state.SetLabel(std::string(to_string(v)));
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_PredictNoise)
    ->Arg(static_cast<int>(Variant::DAE))
    ->Arg(static_cast<int>(Variant::HDAE_U))
    ->Unit(benchmark::kMillisecond);

void BM_EncodeSemantic(benchmark::State& state) {
    torch::NoGradGuard no_grad;
    DiffusionAutoencoder model(desk_model(Variant::HDAE_U));
    model->eval();
    auto x = torch::randn({32, 3, 32, 32});
    for (auto _ : state) {
        benchmark::DoNotOptimize(model->encode_semantic(x).tensor());
    }
    state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EncodeSemantic)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
    auto a = torch::rand({state.range(0), 3, 32, 32}) * 2 - 1;
    auto b = torch::rand({state.range(0), 3, 32, 32}) * 2 - 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ssim(a, b));
    }
}
BENCHMARK(BM_Ssim)->Arg(1)->Arg(64);

void BM_Manipulate(benchmark::State& state) {
    const int64_t L = 4, d = 128;
    auto w = torch::randn({L * d}, torch::kFloat64);
    AttributeDirection dir;
    dir.n.assign(w.data_ptr<double>(), w.data_ptr<double>() + L * d);
    dir.levels = L;
    dir.dim = d;
    dir.n_hat = normalize_direction(dir.n);
    const auto t = truncate_direction(dir, state.range(0));
    auto code = HierarchicalCode(torch::randn({1, L, d}));
    for (auto _ : state) {
        benchmark::DoNotOptimize(manipulate(code, t, 0.5).tensor());
    }
}
BENCHMARK(BM_Manipulate)->Arg(16)->Arg(512);

void BM_TruncateDirection(benchmark::State& state) {
    auto w = torch::randn({512}, torch::kFloat64);
    AttributeDirection dir;
    dir.n.assign(w.data_ptr<double>(), w.data_ptr<double>() + 512);
    dir.levels = 4;
    dir.dim = 128;
    dir.n_hat = normalize_direction(dir.n);
    for (auto _ : state) {
        benchmark::DoNotOptimize(truncate_direction(dir, 16).support.data());
    }
}
BENCHMARK(BM_TruncateDirection);

} // namespace

BENCHMARK_MAIN();
