#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "core.hpp"
#include "mesh.hpp"
#include "spatial_hash.hpp"
#include "util.hpp"

namespace dgm
{
    /// Squared nearest distances from each point of `from` to the set `to`.
    inline std::vector<double> nearest_distances2(const std::vector<Vec3> & from, const std::vector<Vec3> & to)
    {
        const UniformGridIndex index(to);
        std::vector<double> d2(from.size());
        parallel_for(from.size(), [&](std::size_t i) { d2[i] = index.nearest(from[i]).distance2; });
        return d2;
    }

    /**
     * Symmetric Chamfer distance with squared distances:
     * ½ (mean_a min_b ‖a − b‖² + mean_b min_a ‖a − b‖²).
     * Means are plain left-to-right sums in index order.
     */
    inline double chamfer(const std::vector<Vec3> & a, const std::vector<Vec3> & b)
    {
        if (a.empty() || b.empty())
            throw Error(ErrorKind::EmptyInput, "chamfer distance needs two nonempty sets");
        const auto da = nearest_distances2(a, b);
        const auto db = nearest_distances2(b, a);
        double sa = 0.0, sb = 0.0;
        for (double v : da)
            sa += v;
        for (double v : db)
            sb += v;
        return 0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size()));
    }

    enum class EmdMode
    {
        exact,
        entropic,
    };

    inline constexpr std::size_t emd_exact_limit = 1024;

    /**
     * Minimum-cost perfect matching for a dense N×N cost matrix (row-major),
     * shortest augmenting paths with potentials. Returns row → column.
     */
    inline std::vector<int> solve_assignment(const std::vector<double> & cost, std::size_t n)
    {
        const double inf = std::numeric_limits<double>::infinity();
        // 1-based arrays; column 0 is the virtual start
        std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
        std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
        std::vector<double> minv(n + 1);
        std::vector<char> used(n + 1);
        for (std::size_t i = 1; i <= n; ++i)
        {
            p[0] = i;
            std::size_t j0 = 0;
            std::fill(minv.begin(), minv.end(), inf);
            std::fill(used.begin(), used.end(), 0);
            do
            {
                used[j0] = 1;
                const std::size_t i0 = p[j0];
                double delta = inf;
                std::size_t j1 = 0;
                const double * row = cost.data() + (i0 - 1) * n;
                for (std::size_t j = 1; j <= n; ++j)
                {
                    if (used[j])
                        continue;
                    const double cur = row[j - 1] - u[i0] - v[j];
                    if (cur < minv[j])
                    {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if (minv[j] < delta)
                    {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                for (std::size_t j = 0; j <= n; ++j)
                {
                    if (used[j])
                    {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    }
                    else
                    {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
            } while (p[j0] != 0);
            do
            {
                const std::size_t j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
            } while (j0 != 0);
        }
        std::vector<int> match(n, -1);
        for (std::size_t j = 1; j <= n; ++j)
            match[p[j] - 1] = static_cast<int>(j - 1);
        return match;
    }

    /// Mean matched Euclidean distance of a given matching, summed in index order of a.
    inline double matching_cost(const std::vector<Vec3> & a, const std::vector<Vec3> & b, const std::vector<int> & match)
    {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            s += (a[i] - b[match[i]]).norm();
        return s / static_cast<double>(a.size());
    }

    namespace detail
    {
        inline double log_sum_exp(const double * x, std::size_t n, std::size_t stride)
        {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < n; ++k)
                m = std::max(m, x[k * stride]);
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                s += std::exp(x[k * stride] - m);
            return m + std::log(s);
        }

        /**
         * Log-domain Sinkhorn with uniform marginals, followed by rounding to
         * an exactly feasible plan. The cost of a feasible plan can never be
         * below the optimal matching cost.
         */
        inline double entropic_emd(const std::vector<Vec3> & a, const std::vector<Vec3> & b, double reg_fraction, int max_iter)
        {
            const std::size_t n = a.size();
            std::vector<double> cost(n * n);
            double mean_cost = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                {
                    cost[i * n + j] = (a[i] - b[j]).norm();
                    mean_cost += cost[i * n + j];
                }
            mean_cost /= static_cast<double>(n * n);
            if (mean_cost == 0.0)
                return 0.0;
            const double eps = reg_fraction * mean_cost;
            const double log_w = -std::log(static_cast<double>(n));
            std::vector<double> f(n, 0.0), g(n, 0.0), tmp(n * n);
            for (int it = 0; it < max_iter; ++it)
            {
                for (std::size_t i = 0; i < n; ++i)
                {
                    for (std::size_t j = 0; j < n; ++j)
                        tmp[j] = (g[j] - cost[i * n + j]) / eps;
                    f[i] = eps * (log_w - log_sum_exp(tmp.data(), n, 1));
                }
                double err = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                {
                    for (std::size_t i = 0; i < n; ++i)
                        tmp[i] = (f[i] - cost[i * n + j]) / eps;
                    const double next = eps * (log_w - log_sum_exp(tmp.data(), n, 1));
                    err = std::max(err, std::abs(next - g[j]));
                    g[j] = next;
                }
                if (err < 1e-10 * mean_cost)
                    break;
            }
            const double w = 1.0 / static_cast<double>(n);
            std::vector<double> plan(n * n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    plan[i * n + j] = std::exp((f[i] + g[j] - cost[i * n + j]) / eps);
            // rows down to at most w, then columns, then spread the deficit
            for (std::size_t i = 0; i < n; ++i)
            {
                double r = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    r += plan[i * n + j];
                const double s = r > w ? w / r : 1.0;
                for (std::size_t j = 0; j < n; ++j)
                    plan[i * n + j] *= s;
            }
            for (std::size_t j = 0; j < n; ++j)
            {
                double c = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    c += plan[i * n + j];
                const double s = c > w ? w / c : 1.0;
                for (std::size_t i = 0; i < n; ++i)
                    plan[i * n + j] *= s;
            }
            std::vector<double> dr(n), dc(n);
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i)
            {
                double r = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    r += plan[i * n + j];
                dr[i] = std::max(w - r, 0.0);
                total += dr[i];
            }
            for (std::size_t j = 0; j < n; ++j)
            {
                double c = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    c += plan[i * n + j];
                dc[j] = std::max(w - c, 0.0);
            }
            double result = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                {
                    double pij = plan[i * n + j];
                    if (total > 0.0)
                        pij += dr[i] * dc[j] / total;
                    result += pij * cost[i * n + j];
                }
            return result;
        }
    }

    /**
     * Earth Mover's distance between equal-size sets: the minimum over
     * perfect matchings of the mean matched Euclidean distance. Entropic
     * mode returns the cost of a feasible plan near the optimum, so it is
     * an upper estimate (up to rounding) of the exact value.
     */
    inline double emd(const std::vector<Vec3> & a, const std::vector<Vec3> & b, EmdMode mode = EmdMode::exact)
    {
        if (a.size() != b.size())
            throw Error(ErrorKind::SizeMismatch, "earth mover's distance needs equal-size sets");
        if (a.empty())
            throw Error(ErrorKind::EmptyInput, "earth mover's distance needs nonempty sets");
        const std::size_t n = a.size();
        if (mode == EmdMode::entropic)
            return detail::entropic_emd(a, b, 0.01, 3000);
        if (n > emd_exact_limit)
            throw Error(ErrorKind::TooLarge, "exact earth mover's distance is limited to 1024 points");
        std::vector<double> cost(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                cost[i * n + j] = (a[i] - b[j]).norm();
        return matching_cost(a, b, solve_assignment(cost, n));
    }

    struct MetricReport
    {
        double cd = 0.0;
        double emd = 0.0;
        std::size_t n_samples = 0;
        std::uint64_t seed = 0;
        // Values are reported as-is; multiply by this to express them in the
        // reporting unit (1 = raw squared world units for cd).
        double units_scale = 1.0;
        EmdMode emd_mode = EmdMode::exact;
    };

    /// Samples both meshes with sub-seeds of `seed` and compares the samples.
    inline MetricReport mesh_metric_report(const TriMesh & pred, const TriMesh & gt, std::size_t n, std::uint64_t seed,
                                           EmdMode mode = EmdMode::exact)
    {
        if (n == 0)
            throw Error(ErrorKind::InvalidArgument, "sample count must be positive");
        const auto a = sample_surface(pred, n, derive_seed(seed, 1));
        const auto b = sample_surface(gt, n, derive_seed(seed, 2));
        MetricReport r;
        r.n_samples = n;
        r.seed = seed;
        r.emd_mode = mode;
        r.cd = chamfer(a.positions, b.positions);
        r.emd = emd(a.positions, b.positions, mode);
        return r;
    }
}
