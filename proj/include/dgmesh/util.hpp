#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

namespace dgm
{
    /// SplitMix64 step; used to derive independent sub-seeds from one seed.
    inline std::uint64_t splitmix64(std::uint64_t x)
    {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
    {
        return splitmix64(seed ^ splitmix64(stream + 0x5851F42D4C957F2Dull));
    }

    /**
     * Deterministic random source. Conversions to floating point are done by
     * hand so that sequences are identical across standard library vendors.
     */
    class Rng
    {
    public:
        explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

        std::uint64_t next() { return engine_(); }

        /// Uniform in [0, 1).
        double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

        double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

        /// Uniform integer in [0, n).
        std::uint64_t below(std::uint64_t n)
        {
            // Lemire-style rejection keeps the distribution exact.
            const std::uint64_t limit = (~std::uint64_t(0)) - (~std::uint64_t(0)) % n;
            std::uint64_t v = engine_();
            while (v >= limit)
                v = engine_();
            return v % n;
        }

        double normal()
        {
            if (has_spare_)
            {
                has_spare_ = false;
                return spare_;
            }
            double u1 = uniform();
            while (u1 <= 0.0)
                u1 = uniform();
            const double u2 = uniform();
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double a = 2.0 * M_PI * u2;
            spare_ = r * std::sin(a);
            has_spare_ = true;
            return r * std::cos(a);
        }

    private:
        std::mt19937_64 engine_;
        bool has_spare_ = false;
        double spare_ = 0.0;
    };

    namespace detail
    {
        inline std::atomic<int> & thread_count_ref()
        {
            static std::atomic<int> count {1};
            return count;
        }
    }

    /// Worker count used by parallel kernels. Results never depend on it.
    inline void set_num_threads(int n) { detail::thread_count_ref().store(std::max(1, n)); }
    inline int num_threads() { return detail::thread_count_ref().load(); }

    /**
     * Static-chunked parallel loop. `fn(i)` must only write state owned by
     * index i; reductions are done by the caller afterwards in index order.
     */
    template <typename Fn>
    void parallel_for(std::size_t n, Fn && fn)
    {
        const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
        if (workers <= 1 || n < 64)
        {
            for (std::size_t i = 0; i < n; ++i)
                fn(i);
            return;
        }
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w)
        {
            pool.emplace_back([&, w]() {
                try
                {
                    const std::size_t begin = w * chunk;
                    const std::size_t end = std::min(n, begin + chunk);
                    for (std::size_t i = begin; i < end; ++i)
                        fn(i);
                }
                catch (...)
                {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto & t : pool)
            t.join();
        for (auto & e : errors)
            if (e)
                std::rethrow_exception(e);
    }

    /// Neumaier-compensated accumulator.
    struct CompensatedSum
    {
        double sum = 0.0;
        double c = 0.0;

        void add(double v)
        {
            const double t = sum + v;
            if (std::abs(sum) >= std::abs(v))
                c += (sum - t) + v;
            else
                c += (v - t) + sum;
            sum = t;
        }

        double value() const { return sum + c; }
    };
}
