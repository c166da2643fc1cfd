#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "core.hpp"
#include "fft.hpp"
#include "grid.hpp"
#include "util.hpp"

namespace dgm::psr
{
    struct PsrConfig
    {
        GridSpec grid;
        double sigma = 2.0;  // Gaussian smoothing width, in cells
        // When set, each point carries mass 1/N and the splat is read as a
        // density (divided by h³), so χ jumps by about 1/area across the
        // surface whatever the sample count or resolution.
        bool normalize_by_count = false;

        void validate() const
        {
            grid.validate();
            if (!grid.is_power_of_two())
                throw Error(ErrorKind::UnsupportedResolution, "spectral solve needs a power-of-two resolution");
            if (!(sigma >= 0.0))
                throw Error(ErrorKind::InvalidArgument, "sigma must be non-negative");
        }
    };

    /// Order-sensitive FNV-1a hash over the raw bytes of a cloud.
    inline std::uint64_t checksum(const OrientedPointCloud & cloud)
    {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&](double v) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 8; ++b)
            {
                h ^= (bits >> (8 * b)) & 0xffu;
                h *= 0x100000001b3ull;
            }
        };
        for (std::size_t i = 0; i < cloud.size(); ++i)
            for (int a = 0; a < 3; ++a)
            {
                mix(cloud.positions[i][a]);
                mix(cloud.normals[i][a]);
            }
        return h;
    }

    /**
     * Distributes each normal to the 8 nodes of its cell with trilinear
     * weights. Nodes accumulate in point order with compensated sums.
     */
    inline VectorGrid splat_points(const OrientedPointCloud & cloud, const GridSpec & spec)
    {
        if (cloud.positions.size() != cloud.normals.size())
            throw Error(ErrorKind::SizeMismatch, "positions and normals differ in count");
        VectorGrid out(spec);
        std::array<std::vector<double>, 3> carry;
        for (auto & c : carry)
            c.assign(spec.node_count(), 0.0);
        for (std::size_t i = 0; i < cloud.size(); ++i)
        {
            const auto st = locate(spec, cloud.positions[i], i);
            const auto w = st.weights();
            for (int c = 0; c < 8; ++c)
            {
                const std::size_t node = st.corner_index(spec, c);
                for (int a = 0; a < 3; ++a)
                {
                    const double v = w[c] * cloud.normals[i][a];
                    double & s = out.values[a][node];
                    const double t = s + v;
                    if (std::abs(s) >= std::abs(v))
                        carry[a][node] += (s - t) + v;
                    else
                        carry[a][node] += (v - t) + s;
                    s = t;
                }
            }
        }
        for (int a = 0; a < 3; ++a)
            for (std::size_t node = 0; node < spec.node_count(); ++node)
                out.values[a][node] += carry[a][node];
        return out;
    }

    namespace detail
    {
        /// Per-bin multipliers m_d such that χ̂ = Σ_d m_d · v̂_d.
        struct SpectralOperator
        {
            int n = 0;
            std::array<std::vector<std::complex<double>>, 3> multiplier;
        };

        inline SpectralOperator build_operator(const PsrConfig & cfg)
        {
            const int n = cfg.grid.resolution;
            const double h = cfg.grid.spacing;
            const int nh = n / 2 + 1;
            const std::size_t bins = static_cast<std::size_t>(n) * n * nh;
            SpectralOperator op;
            op.n = n;
            for (auto & m : op.multiplier)
                m.assign(bins, 0.0);
            const double two_pi = 2.0 * M_PI;
            for (int kz = 0; kz < n; ++kz)
                for (int ky = 0; ky < n; ++ky)
                    for (int kx = 0; kx < nh; ++kx)
                    {
                        const std::array<int, 3> f {fft::signed_frequency(kx, n), fft::signed_frequency(ky, n),
                                                    fft::signed_frequency(kz, n)};
                        if (f[0] == 0 && f[1] == 0 && f[2] == 0)
                            continue;  // mean pinned to zero
                        std::array<double, 3> omega {};
                        double omega2 = 0.0;
                        double cells2 = 0.0;
                        for (int a = 0; a < 3; ++a)
                        {
                            omega[a] = two_pi * f[a] / (n * h);
                            omega2 += omega[a] * omega[a];
                            const double fc = static_cast<double>(f[a]) / n;
                            cells2 += fc * fc;
                        }
                        const double smooth = std::exp(-2.0 * M_PI * M_PI * cfg.sigma * cfg.sigma * cells2);
                        const std::size_t bin = static_cast<std::size_t>(kx) + nh * (static_cast<std::size_t>(ky) + static_cast<std::size_t>(n) * kz);
                        for (int a = 0; a < 3; ++a)
                        {
                            // the derivative has no real-valued Nyquist mode
                            if (2 * std::abs(f[a]) == n)
                                continue;
                            op.multiplier[a][bin] = std::complex<double>(0.0, -smooth * omega[a] / omega2);
                        }
                    }
            return op;
        }

        inline std::vector<double> apply(const SpectralOperator & op, const std::array<std::vector<double>, 3> & field)
        {
            std::vector<std::complex<double>> acc(op.multiplier[0].size(), 0.0);
            for (int a = 0; a < 3; ++a)
            {
                const auto spec = fft::forward(field[a], op.n);
                for (std::size_t b = 0; b < acc.size(); ++b)
                    acc[b] += op.multiplier[a][b] * spec[b];
            }
            return fft::inverse(acc, op.n);
        }

        inline std::array<std::vector<double>, 3> apply_transpose(const SpectralOperator & op, const std::vector<double> & grad)
        {
            const auto spec = fft::forward(grad, op.n);
            std::array<std::vector<double>, 3> out;
            std::vector<std::complex<double>> tmp(spec.size());
            for (int a = 0; a < 3; ++a)
            {
                for (std::size_t b = 0; b < spec.size(); ++b)
                    tmp[b] = std::conj(op.multiplier[a][b]) * spec[b];
                out[a] = fft::inverse(tmp, op.n);
            }
            return out;
        }
    }

    /**
     * Spectral solve of ∇²χ = ∇·ñ on the periodic grid, ñ being the field
     * smoothed by a Gaussian of `cfg.sigma` cells. χ grows along the normals,
     * so with outward normals it is negative inside the surface.
     */
    inline ScalarGrid solve_poisson(const VectorGrid & field, const PsrConfig & cfg)
    {
        cfg.validate();
        if (!field.spec.same_as(cfg.grid))
            throw Error(ErrorKind::GridMismatch, "vector field and config grids differ");
        for (const auto & comp : field.values)
            for (double v : comp)
                if (!std::isfinite(v))
                    throw Error(ErrorKind::InvalidArgument, "vector field has non-finite values");
        const auto op = detail::build_operator(cfg);
        ScalarGrid chi(cfg.grid);
        chi.values = detail::apply(op, field.values);
        return chi;
    }

    /// Shifts χ so that its mean over the cloud's points is zero.
    inline ScalarGrid normalize_indicator(const ScalarGrid & chi, const OrientedPointCloud & cloud)
    {
        if (cloud.empty())
            throw Error(ErrorKind::EmptyInput, "cannot normalize against an empty cloud");
        CompensatedSum sum;
        for (const auto & p : cloud.positions)
            sum.add(interpolate(chi, p));
        const double shift = sum.value() / static_cast<double>(cloud.size());
        ScalarGrid out = chi;
        for (double & v : out.values)
            v -= shift;
        return out;
    }

    /// Everything the reverse pass needs from a forward evaluation.
    struct PsrAdjoint
    {
        PsrConfig config;
        OrientedPointCloud cloud;
        ScalarGrid raw_chi;  // scaled, before the iso shift
        double scale = 1.0;
        std::uint64_t input_checksum = 0;
    };

    struct PsrResult
    {
        ScalarGrid chi;
        PsrAdjoint adjoint;
    };

    inline PsrResult psr_forward(const OrientedPointCloud & cloud, const PsrConfig & cfg)
    {
        cfg.validate();
        if (cloud.empty())
            throw Error(ErrorKind::EmptyInput, "cannot reconstruct from an empty cloud");
        const VectorGrid field = splat_points(cloud, cfg.grid);
        ScalarGrid raw = solve_poisson(field, cfg);
        const double h3 = cfg.grid.spacing * cfg.grid.spacing * cfg.grid.spacing;
        const double scale = cfg.normalize_by_count ? 1.0 / (static_cast<double>(cloud.size()) * h3) : 1.0;
        if (scale != 1.0)
            for (double & v : raw.values)
                v *= scale;
        PsrResult result;
        result.chi = normalize_indicator(raw, cloud);
        result.adjoint.config = cfg;
        result.adjoint.cloud = cloud;
        result.adjoint.raw_chi = std::move(raw);
        result.adjoint.scale = scale;
        result.adjoint.input_checksum = checksum(cloud);
        return result;
    }

    struct PsrGradient
    {
        std::vector<Vec3> positions;
        std::vector<Vec3> normals;
    };

    /// Reverse pass through normalize ∘ solve ∘ splat.
    inline PsrGradient psr_gradient(const PsrAdjoint & adj, const ScalarGrid & dl_dchi)
    {
        if (checksum(adj.cloud) != adj.input_checksum)
            throw Error(ErrorKind::AdjointMismatch, "adjoint cache does not match its forward inputs");
        if (!dl_dchi.spec.same_as(adj.config.grid) || dl_dchi.values.size() != adj.config.grid.node_count())
            throw Error(ErrorKind::GridMismatch, "loss gradient grid differs from the forward grid");
        const GridSpec & spec = adj.config.grid;
        const std::size_t n_points = adj.cloud.size();
        const double inv_n = 1.0 / static_cast<double>(n_points);

        CompensatedSum total;
        for (double g : dl_dchi.values)
            total.add(g);
        const double g_sum = total.value();

        // back through the shift and the count scaling: s·(g − (Σg/N)·Σ_i W_i)
        std::vector<double> g_raw(dl_dchi.values.size());
        for (std::size_t k = 0; k < g_raw.size(); ++k)
            g_raw[k] = adj.scale * dl_dchi.values[k];
        std::vector<TrilinearStencil> stencils(n_points);
        for (std::size_t i = 0; i < n_points; ++i)
            stencils[i] = locate(spec, adj.cloud.positions[i], i);
        const double shift_coeff = adj.scale * g_sum * inv_n;
        for (std::size_t i = 0; i < n_points; ++i)
        {
            const auto w = stencils[i].weights();
            for (int c = 0; c < 8; ++c)
                g_raw[stencils[i].corner_index(spec, c)] -= shift_coeff * w[c];
        }

        const auto op = detail::build_operator(adj.config);
        const auto g_field = detail::apply_transpose(op, g_raw);

        PsrGradient out;
        out.positions.assign(n_points, Vec3::Zero());
        out.normals.assign(n_points, Vec3::Zero());
        parallel_for(n_points, [&](std::size_t i) {
            const auto & st = stencils[i];
            const auto w = st.weights();
            const auto dw = st.weight_gradients(spec.spacing);
            const Vec3 & normal = adj.cloud.normals[i];
            Vec3 gn = Vec3::Zero();
            Vec3 gp = Vec3::Zero();
            Vec3 chi_grad = Vec3::Zero();
            for (int c = 0; c < 8; ++c)
            {
                const std::size_t node = st.corner_index(spec, c);
                const Vec3 gv(g_field[0][node], g_field[1][node], g_field[2][node]);
                gn += w[c] * gv;
                gp += dw[c] * gv.dot(normal);
                chi_grad += dw[c] * adj.raw_chi.values[node];
            }
            // the iso shift depends on the points through χ_raw interpolation
            gp -= g_sum * inv_n * chi_grad;
            out.normals[i] = gn;
            out.positions[i] = gp;
        });
        return out;
    }
}
