#include <benchmark/benchmark.h>

#include <random>

#include "hglm/model.hpp"
#include "hglm/ops.hpp"
#include "hglm/training.hpp"

using namespace hglm;

namespace {

Tensor filled(Shape shape, std::uint64_t seed, bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

void BM_Linear(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor x = filled({256, n}, 1), w = filled({n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(ops::linear(x, w));
    state.SetItemsProcessed(state.iterations() * 2 * 256 * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_Linear)->Arg(64)->Arg(128)->Arg(256);

ModelConfig toy(bool hourglass) {
    ModelConfig c;
    c.L = 4;
    c.n_heads = 4;
    c.max_seq = 64;
    if (hourglass) {
        c.ffn_kind = FfnKind::hourglass;
        c.d_model = 88;
        c.d_h = 32;
        c.K = 4;
    } else {
        c.ffn_kind = FfnKind::conventional;
        c.d_model = 64;
        c.d_h = 256;
        c.K = 1;
    }
    return c;
}

std::vector<int> tokens(std::size_t n) {
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>((i * 37 + 11) % 256);
    return t;
}

void BM_Forward(benchmark::State& state) {
    const auto m = init_weights(toy(state.range(0) != 0), 1);
    const auto in = tokens(256);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(forward_batch(m, in, 4));
    state.SetLabel(state.range(0) ? "hourglass" : "conventional");
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

void BM_ForwardBackward(benchmark::State& state) {
    const auto m = init_weights(toy(state.range(0) != 0), 1);
    const auto in = tokens(257);
    const std::vector<int> x(in.begin(), in.end() - 1), y(in.begin() + 1, in.end());
    for (auto _ : state) {
        m.zero_grad();
        training_loss(forward_batch(m, x, 4), y, 1e-4).backward();
    }
    state.SetLabel(state.range(0) ? "hourglass" : "conventional");
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
