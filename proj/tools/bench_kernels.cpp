// Times the serial reference matmul kernels against the OpenMP versions and
// checks that both produce bitwise-identical results.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "umc/common.hpp"
#include "umc/kernels.hpp"

using namespace umc;

namespace {

using clk = std::chrono::steady_clock;

double time_ms(const std::function<void()>& f, int reps) {
    f();  // warm-up
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) f();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
    int n = 256;
    int reps = 5;
    if (argc > 1) n = std::atoi(argv[1]);
    if (argc > 2) reps = std::atoi(argv[2]);
    if (n < 1 || reps < 1) {
        std::fprintf(stderr, "usage: bench_kernels [size] [reps]\n");
        return 2;
    }

    Rng rng(42);
    std::vector<float> a(static_cast<size_t>(n) * n), b(a.size()), serial(a.size()),
        parallel(a.size());
    for (auto& v : a) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());

    struct Case {
        const char* name;
        void (*serial_fn)(const float*, const float*, float*, int, int, int, bool);
        void (*parallel_fn)(const float*, const float*, float*, int, int, int, bool);
    };
    const Case cases[] = {
        {"mm_nn", kernels::mm_nn_serial, kernels::mm_nn_parallel},
        {"mm_nt", kernels::mm_nt_serial, kernels::mm_nt_parallel},
        {"mm_tn", kernels::mm_tn_serial, kernels::mm_tn_parallel},
    };

    std::printf("%-8s %12s %12s %9s %s\n", "kernel", "serial (ms)", "openmp (ms)", "speedup",
                "bitwise");
    bool all_equal = true;
    for (const auto& c : cases) {
        const double ts =
            time_ms([&] { c.serial_fn(a.data(), b.data(), serial.data(), n, n, n, false); }, reps);
        const double tp = time_ms(
            [&] { c.parallel_fn(a.data(), b.data(), parallel.data(), n, n, n, false); }, reps);
        const bool equal =
            std::memcmp(serial.data(), parallel.data(), serial.size() * sizeof(float)) == 0;
        all_equal = all_equal && equal;
        std::printf("%-8s %12.3f %12.3f %8.2fx %s\n", c.name, ts, tp, ts / tp,
                    equal ? "yes" : "NO");
    }
    return all_equal ? 0 : 1;
}
