// Kernel benchmark: OpenMP implementations against the serial reference.
// Verifies bitwise agreement while timing, since the kernels promise a
// fixed reduction order regardless of thread count.

#include "rosaq/matrix.hpp"
#include "rosaq/pipeline.hpp"
#include "rosaq/quant.hpp"
#include "rosaq/reference.hpp"
#include "rosaq/synthetic.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

using namespace rosaq;

namespace {

double time_seconds(const std::function<void()>& fn, int reps) {
    using clock = std::chrono::steady_clock;
    fn(); // warm up
    const auto start = clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double>(clock::now() - start).count() / reps;
}

bool bitwise_equal(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) return false;
    }
    return true;
}

void report(const char* name, double serial, double parallel, bool exact) {
    std::printf("%-24s serial %9.4f ms   openmp %9.4f ms   speedup %5.2fx   %s\n", name,
                serial * 1e3, parallel * 1e3, serial / parallel,
                exact ? "bitwise-equal" : "MISMATCH");
}

} // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    Rng rng(1234);

    {
        const std::size_t n = 384;
        const DenseMatrix a = random_matrix(rng, n, n);
        const DenseMatrix b = random_matrix(rng, n, n);
        DenseMatrix out_p, out_s;
        const double tp = time_seconds([&] { out_p = matmul(a, b); }, 3);
        const double ts = time_seconds([&] { out_s = ref::matmul(a, b); }, 3);
        report("matmul 384x384", ts, tp, bitwise_equal(out_p, out_s));
    }

    {
        const DenseMatrix x = random_matrix(rng, 2048, 256);
        DenseMatrix out_p, out_s;
        const double tp = time_seconds([&] { out_p = gram(x); }, 3);
        const double ts = time_seconds([&] { out_s = ref::gram(x); }, 3);
        report("gram 2048x256", ts, tp, bitwise_equal(out_p, out_s));
    }

    {
        // Group quantization: the parallel column loop in transform_weight
        // against a scalar pass with the reference quantizer.
        const std::size_t d = 512, dp = 512;
        const DenseMatrix w = random_matrix(rng, d, dp);
        const QuantConfig cfg(4, 128);
        MixedPrecisionWeight mp;
        const double tp = time_seconds(
            [&] { mp = transform_weight(w, nullptr, {SelectionMode::Top, 0}, cfg); }, 3);
        std::vector<std::vector<std::uint8_t>> serial_packed;
        const double ts = time_seconds(
            [&] {
                serial_packed.clear();
                std::vector<double> slice(cfg.group_size);
                for (std::size_t g = 0; g < d / cfg.group_size; ++g) {
                    for (std::size_t c = 0; c < dp; ++c) {
                        for (std::size_t i = 0; i < cfg.group_size; ++i) {
                            slice[i] = w(g * cfg.group_size + i, c);
                        }
                        serial_packed.push_back(ref::pack(ref::rtn(slice, cfg.bits).codes, cfg.bits));
                    }
                }
            },
            3);
        bool exact = serial_packed.size() == mp.groups.size();
        // transform_weight orders records group-major; the serial pass walks
        // the same order, so records line up index for index.
        for (std::size_t g = 0; exact && g < mp.groups.size(); ++g) {
            exact = serial_packed[g] == mp.groups[g].codes;
        }
        report("quantize 512x512 g128", ts, tp, exact);
    }

    {
        // Fused dequantize-matmul against dequantize-then-reference-matmul.
        const std::size_t d = 512, dp = 512, t = 64;
        const DenseMatrix w = random_matrix(rng, d, dp);
        const DenseMatrix x = random_matrix(rng, t, d);
        const MixedPrecisionWeight mp =
            transform_weight(w, nullptr, {SelectionMode::Top, 32}, QuantConfig(4, 128));
        DenseMatrix out_p, out_s;
        const double tp = time_seconds([&] { out_p = mixed_matmul(x, mp); }, 3);
        const double ts = time_seconds(
            [&] {
                const DenseMatrix dense = reconstruct(mp);
                out_s = ref::matmul(x, dense);
            },
            3);
        report("mixed_matmul 64x512", ts, tp, bitwise_equal(out_p, out_s));
    }

    return 0;
}
