#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "error.hpp"

namespace dgm::fft
{
    using Complex = std::complex<double>;

    namespace detail
    {
        struct PlanPair
        {
            fftw_plan forward = nullptr;
            fftw_plan inverse = nullptr;
            int n = 0;

            ~PlanPair()
            {
                if (forward)
                    fftw_destroy_plan(forward);
                if (inverse)
                    fftw_destroy_plan(inverse);
            }
        };

        inline std::mutex & planner_mutex()
        {
            static std::mutex m;
            return m;
        }

        struct FftwDeleter
        {
            void operator()(void * p) const { fftw_free(p); }
        };

        template <typename T>
        using FftwBuffer = std::unique_ptr<T, FftwDeleter>;

        template <typename T>
        FftwBuffer<T> allocate(std::size_t count)
        {
            auto * p = static_cast<T *>(fftw_malloc(sizeof(T) * count));
            if (!p)
                throw std::bad_alloc();
            return FftwBuffer<T>(p);
        }

        /// Cached FFTW_ESTIMATE plans; estimate mode keeps the chosen
        /// algorithm, and therefore the rounding, fixed from run to run.
        inline const PlanPair & plans_for(int n)
        {
            static std::map<int, std::unique_ptr<PlanPair>> cache;
            std::lock_guard<std::mutex> lock(planner_mutex());
            auto it = cache.find(n);
            if (it != cache.end())
                return *it->second;
            const std::size_t real_count = static_cast<std::size_t>(n) * n * n;
            const std::size_t cplx_count = static_cast<std::size_t>(n) * n * (n / 2 + 1);
            auto real = allocate<double>(real_count);
            auto cplx = allocate<fftw_complex>(cplx_count);
            auto pair = std::make_unique<PlanPair>();
            pair->n = n;
            pair->forward = fftw_plan_dft_r2c_3d(n, n, n, real.get(), cplx.get(), FFTW_ESTIMATE);
            pair->inverse = fftw_plan_dft_c2r_3d(n, n, n, cplx.get(), real.get(), FFTW_ESTIMATE);
            if (!pair->forward || !pair->inverse)
                throw Error(ErrorKind::UnsupportedResolution, "FFTW could not plan this size");
            auto & ref = *pair;
            cache.emplace(n, std::move(pair));
            return ref;
        }
    }

    /// Half spectrum of an n³ real field stored with x fastest: n·n·(n/2+1) bins.
    inline std::vector<Complex> forward(const std::vector<double> & field, int n)
    {
        const auto & plans = detail::plans_for(n);
        const std::size_t real_count = field.size();
        const std::size_t cplx_count = static_cast<std::size_t>(n) * n * (n / 2 + 1);
        auto in = detail::allocate<double>(real_count);
        auto out = detail::allocate<fftw_complex>(cplx_count);
        std::copy(field.begin(), field.end(), in.get());
        fftw_execute_dft_r2c(plans.forward, in.get(), out.get());
        std::vector<Complex> spectrum(cplx_count);
        for (std::size_t i = 0; i < cplx_count; ++i)
            spectrum[i] = Complex(out.get()[i][0], out.get()[i][1]);
        return spectrum;
    }

    /// Normalized inverse of `forward`.
    inline std::vector<double> inverse(const std::vector<Complex> & spectrum, int n)
    {
        const auto & plans = detail::plans_for(n);
        const std::size_t real_count = static_cast<std::size_t>(n) * n * n;
        auto in = detail::allocate<fftw_complex>(spectrum.size());
        auto out = detail::allocate<double>(real_count);
        for (std::size_t i = 0; i < spectrum.size(); ++i)
        {
            in.get()[i][0] = spectrum[i].real();
            in.get()[i][1] = spectrum[i].imag();
        }
        fftw_execute_dft_c2r(plans.inverse, in.get(), out.get());
        std::vector<double> field(real_count);
        const double scale = 1.0 / static_cast<double>(real_count);
        for (std::size_t i = 0; i < real_count; ++i)
            field[i] = out.get()[i] * scale;
        return field;
    }

    /// Signed frequency of bin k for a length-n transform.
    inline int signed_frequency(int k, int n) { return k <= n / 2 ? k : k - n; }
}
