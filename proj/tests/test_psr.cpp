#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "dgmesh/psr.hpp"

using namespace dgm;

namespace
{
    OrientedPointCloud sphere_cloud(std::size_t n, double radius, std::uint64_t seed)
    {
        Rng rng(seed);
        OrientedPointCloud c;
        for (std::size_t i = 0; i < n; ++i)
        {
            const Vec3 v = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            c.positions.push_back(radius * v);
            c.normals.push_back(v);
        }
        return c;
    }

    OrientedPointCloud random_cloud(std::size_t n, const GridSpec & g, std::uint64_t seed)
    {
        Rng rng(seed);
        OrientedPointCloud c;
        const double lo = g.origin.x() + 2 * g.spacing, hi = g.upper().x() - 2 * g.spacing;
        for (std::size_t i = 0; i < n; ++i)
        {
            c.positions.emplace_back(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
            c.normals.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()).normalized());
        }
        return c;
    }

    psr::PsrConfig config(int n, double sigma = 2.0)
    {
        psr::PsrConfig cfg;
        cfg.grid = GridSpec::cube(-1.5, 1.5, n);
        cfg.sigma = sigma;
        return cfg;
    }

    double dot(const std::vector<double> & a, const std::vector<double> & b)
    {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            s += a[i] * b[i];
        return s;
    }

    ScalarGrid random_grid(const GridSpec & g, std::uint64_t seed)
    {
        Rng rng(seed);
        ScalarGrid s(g);
        for (double & v : s.values)
            v = rng.normal();
        return s;
    }

    /// Radius where χ crosses zero along direction d (bisection on interpolated χ).
    double crossing_radius(const ScalarGrid & chi, const Vec3 & d)
    {
        double lo = 0.5, hi = 1.4;
        for (int it = 0; it < 60; ++it)
        {
            const double mid = 0.5 * (lo + hi);
            if (interpolate(chi, mid * d) < 0.0)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    }
}

TEST(Splat, PointOnNode)
{
    const auto g = GridSpec::cube(-1.5, 1.5, 16);
    OrientedPointCloud c;
    c.positions.push_back(g.node_position(5, 6, 7));
    c.normals.push_back(Vec3::UnitZ());
    const auto v = psr::splat_points(c, g);
    const std::size_t node = g.index(5, 6, 7);
    for (std::size_t k = 0; k < g.node_count(); ++k)
    {
        EXPECT_NEAR(v.values[0][k], 0.0, 1e-12);
        EXPECT_NEAR(v.values[1][k], 0.0, 1e-12);
        EXPECT_NEAR(v.values[2][k], k == node ? 1.0 : 0.0, 1e-12);
    }
}

TEST(Splat, EdgeMidpointSplitsEvenly)
{
    const auto g = GridSpec::cube(-1.5, 1.5, 16);
    OrientedPointCloud c;
    c.positions.push_back(0.5 * (g.node_position(3, 4, 5) + g.node_position(4, 4, 5)));
    c.normals.push_back(Vec3::UnitX());
    const auto v = psr::splat_points(c, g);
    EXPECT_NEAR(v.values[0][g.index(3, 4, 5)], 0.5, 1e-12);
    EXPECT_NEAR(v.values[0][g.index(4, 4, 5)], 0.5, 1e-12);
    double total = 0.0;
    for (double x : v.values[0])
        total += std::abs(x);
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Splat, PartitionOfUnity)
{
    const auto g = GridSpec::cube(-1.5, 1.5, 32);
    const auto c = random_cloud(1000, g, 3);
    const auto v = psr::splat_points(c, g);
    for (int a = 0; a < 3; ++a)
    {
        double in = 0.0;
        for (const auto & n : c.normals)
            in += n[a];
        const double out = std::accumulate(v.values[a].begin(), v.values[a].end(), 0.0);
        EXPECT_NEAR(out, in, 1e-9);
    }
}

TEST(Splat, OutsidePointReportsIndex)
{
    const auto g = GridSpec::cube(-1.5, 1.5, 16);
    auto c = random_cloud(10, g, 1);
    c.positions[6] = Vec3(0, 0, 5);
    try
    {
        psr::splat_points(c, g);
        FAIL();
    }
    catch (const Error & e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::OutOfDomain);
        EXPECT_EQ(e.index(), 6u);
    }
}

TEST(Poisson, ZeroFieldGivesZero)
{
    const auto cfg = config(16);
    const VectorGrid v(cfg.grid);
    for (double x : psr::solve_poisson(v, cfg).values)
        EXPECT_EQ(x, 0.0);
}

TEST(Poisson, Linear)
{
    const auto cfg = config(16);
    const auto v = psr::splat_points(random_cloud(50, cfg.grid, 2), cfg.grid);
    VectorGrid v2 = v;
    for (auto & c : v2.values)
        for (double & x : c)
            x *= 2.0;
    const auto a = psr::solve_poisson(v, cfg), b = psr::solve_poisson(v2, cfg);
    for (std::size_t k = 0; k < a.values.size(); ++k)
        EXPECT_NEAR(b.values[k], 2.0 * a.values[k], 1e-12);
}

TEST(Poisson, WholeCellShiftEquivariance)
{
    const auto cfg = config(16);
    const auto v = psr::splat_points(random_cloud(40, cfg.grid, 5), cfg.grid);
    const int n = 16, sx = 3, sy = 1, sz = 2;
    VectorGrid shifted(cfg.grid);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i)
                for (int a = 0; a < 3; ++a)
                    shifted.values[a][cfg.grid.index((i + sx) % n, (j + sy) % n, (k + sz) % n)] = v.values[a][cfg.grid.index(i, j, k)];
    const auto chi = psr::solve_poisson(v, cfg), chi_s = psr::solve_poisson(shifted, cfg);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i)
                EXPECT_NEAR(chi_s.values[cfg.grid.index((i + sx) % n, (j + sy) % n, (k + sz) % n)], chi.values[cfg.grid.index(i, j, k)],
                            1e-12);
}

namespace
{
    /// χ from a naive O(n⁶) DFT: χ̂(ω) = −i e^{−2π²σ²|f|²} ω·v̂ / |ω|², mean and Nyquist derivative modes dropped.
    std::vector<double> dense_dft_solve(const VectorGrid & v, double sigma)
    {
        const int n = v.spec.resolution;
        const double h = v.spec.spacing;
        const std::size_t nodes = v.spec.node_count();
        std::vector<double> chi(nodes, 0.0);
        auto freq = [n](int k) { return k <= n / 2 ? k : k - n; };
        std::vector<std::complex<double>> spectrum(nodes * 3);
        const double two_pi = 2 * M_PI;
        for (int a = 0; a < 3; ++a)
            for (int kz = 0; kz < n; ++kz)
                for (int ky = 0; ky < n; ++ky)
                    for (int kx = 0; kx < n; ++kx)
                    {
                        std::complex<double> s = 0.0;
                        for (int z = 0; z < n; ++z)
                            for (int y = 0; y < n; ++y)
                                for (int x = 0; x < n; ++x)
                                {
                                    const double val = v.values[a][v.spec.index(x, y, z)];
                                    if (val == 0.0)
                                        continue;
                                    const double ph = -two_pi * (kx * x + ky * y + kz * z) / n;
                                    s += val * std::complex<double>(std::cos(ph), std::sin(ph));
                                }
                        spectrum[3 * v.spec.index(kx, ky, kz) + a] = s;
                    }
        std::vector<std::complex<double>> chi_hat(nodes, 0.0);
        for (int kz = 0; kz < n; ++kz)
            for (int ky = 0; ky < n; ++ky)
                for (int kx = 0; kx < n; ++kx)
                {
                    const int f[3] = {freq(kx), freq(ky), freq(kz)};
                    if (f[0] == 0 && f[1] == 0 && f[2] == 0)
                        continue;
                    double w2 = 0.0, c2 = 0.0, w[3];
                    for (int a = 0; a < 3; ++a)
                    {
                        w[a] = two_pi * f[a] / (n * h);
                        w2 += w[a] * w[a];
                        c2 += (double(f[a]) / n) * (double(f[a]) / n);
                    }
                    std::complex<double> acc = 0.0;
                    for (int a = 0; a < 3; ++a)
                        if (2 * std::abs(f[a]) != n)
                            acc += w[a] * spectrum[3 * v.spec.index(kx, ky, kz) + a];
                    chi_hat[v.spec.index(kx, ky, kz)] = std::complex<double>(0, -1) * std::exp(-2 * M_PI * M_PI * sigma * sigma * c2) * acc / w2;
                }
        for (int z = 0; z < n; ++z)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                {
                    std::complex<double> s = 0.0;
                    for (int kz = 0; kz < n; ++kz)
                        for (int ky = 0; ky < n; ++ky)
                            for (int kx = 0; kx < n; ++kx)
                            {
                                const auto c = chi_hat[v.spec.index(kx, ky, kz)];
                                if (c == 0.0)
                                    continue;
                                const double ph = two_pi * (kx * x + ky * y + kz * z) / n;
                                s += c * std::complex<double>(std::cos(ph), std::sin(ph));
                            }
                    chi[v.spec.index(x, y, z)] = s.real() / static_cast<double>(nodes);
                }
        return chi;
    }
}

TEST(Poisson, PlaneOfNormalsMatchesDenseOracleAndIncreases)
{
    const auto cfg = config(16, 1.0);
    const auto & g = cfg.grid;
    // a patch of +z normals on the node plane k = 8
    OrientedPointCloud c;
    for (int j = 2; j < 14; ++j)
        for (int i = 2; i < 14; ++i)
        {
            c.positions.push_back(g.node_position(i, j, 8));
            c.normals.push_back(Vec3::UnitZ());
        }
    const auto v = psr::splat_points(c, g);
    const auto chi = psr::solve_poisson(v, cfg);
    const auto oracle = dense_dft_solve(v, cfg.sigma);
    double scale = 0.0;
    for (double x : oracle)
        scale = std::max(scale, std::abs(x));
    for (std::size_t k = 0; k < oracle.size(); ++k)
        ASSERT_NEAR(chi.values[k], oracle[k], 1e-10 * scale);
    // strictly increasing along z through a 4-cell band around the plane, away from the patch rim
    for (int j = 6; j < 10; ++j)
        for (int i = 6; i < 10; ++i)
            for (int k = 6; k < 10; ++k)
                EXPECT_LT(chi.at(i, j, k), chi.at(i, j, k + 1));
}

TEST(Normalize, ConstantGridBecomesZero)
{
    const auto g = GridSpec::cube(-1.5, 1.5, 16);
    const ScalarGrid chi(g, 3.25);
    for (double v : psr::normalize_indicator(chi, random_cloud(20, g, 4)).values)
        EXPECT_EQ(v, 0.0);
}

TEST(Normalize, Idempotent)
{
    const auto g = GridSpec::cube(-1.5, 1.5, 16);
    const auto cloud = random_cloud(30, g, 5);
    const auto once = psr::normalize_indicator(random_grid(g, 6), cloud);
    const auto twice = psr::normalize_indicator(once, cloud);
    for (std::size_t k = 0; k < once.values.size(); ++k)
        EXPECT_NEAR(twice.values[k], once.values[k], 1e-12);
}

TEST(Normalize, UnitSphereCrossesNearRadiusOne)
{
    const auto cfg = config(64);
    const auto cloud = sphere_cloud(2000, 1.0, 7);
    const auto chi = psr::psr_forward(cloud, cfg).chi;
    double mean = 0.0;
    for (const auto & p : cloud.positions)
        mean += interpolate(chi, p);
    EXPECT_LT(std::abs(mean / cloud.size()), 1e-10);
    Rng rng(8);
    for (int i = 0; i < 50; ++i)
    {
        const Vec3 d = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        EXPECT_LT(std::abs(crossing_radius(chi, d) - 1.0), 1.5 * cfg.grid.spacing);
    }
}

TEST(PsrForward, NegativeInsidePositiveOutside)
{
    const auto chi = psr::psr_forward(sphere_cloud(1000, 0.8, 9), config(32)).chi;
    EXPECT_LT(interpolate(chi, Vec3::Zero()), 0.0);
    EXPECT_GT(interpolate(chi, Vec3(1.2, 0, 0)), 0.0);
}

TEST(PsrForward, PermutationInvariant)
{
    const auto cfg = config(32);
    auto cloud = sphere_cloud(500, 0.8, 10);
    const auto a = psr::psr_forward(cloud, cfg).chi;
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(11);
    for (std::size_t i = perm.size() - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.below(i + 1)]);
    OrientedPointCloud shuffled;
    for (auto i : perm)
    {
        shuffled.positions.push_back(cloud.positions[i]);
        shuffled.normals.push_back(cloud.normals[i]);
    }
    const auto b = psr::psr_forward(shuffled, cfg).chi;
    for (std::size_t k = 0; k < a.values.size(); ++k)
        EXPECT_NEAR(a.values[k], b.values[k], 1e-12);
}

TEST(PsrForward, ResolutionConvergence)
{
    const auto cloud = sphere_cloud(4000, 1.0, 12);
    auto error_at = [&](int n) {
        const auto chi = psr::psr_forward(cloud, config(n)).chi;
        Rng rng(13);
        double e = 0.0;
        for (int i = 0; i < 40; ++i)
            e += std::abs(crossing_radius(chi, Vec3(rng.normal(), rng.normal(), rng.normal()).normalized()) - 1.0);
        return e / 40;
    };
    EXPECT_LT(error_at(64), error_at(32));
}

TEST(PsrForward, Deterministic)
{
    const auto cfg = config(32);
    const auto cloud = sphere_cloud(300, 0.8, 14);
    EXPECT_EQ(psr::psr_forward(cloud, cfg).chi.values, psr::psr_forward(cloud, cfg).chi.values);
}

TEST(PsrForward, RejectsNonPowerOfTwo)
{
    auto cfg = config(24);
    try
    {
        psr::psr_forward(sphere_cloud(10, 0.8, 1), cfg);
        FAIL();
    }
    catch (const Error & e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::UnsupportedResolution);
    }
}

TEST(PsrForward, CountNormalizationMakesScaleSampleIndependent)
{
    auto cfg = config(32);
    cfg.normalize_by_count = true;
    const double a = interpolate(psr::psr_forward(sphere_cloud(1000, 0.8, 15), cfg).chi, Vec3::Zero());
    const double b = interpolate(psr::psr_forward(sphere_cloud(4000, 0.8, 16), cfg).chi, Vec3::Zero());
    EXPECT_NEAR(a / b, 1.0, 0.05);
}

TEST(PsrGradient, ZeroUpstreamGivesZero)
{
    const auto cfg = config(16);
    const auto fwd = psr::psr_forward(random_cloud(20, cfg.grid, 17), cfg);
    const auto g = psr::psr_gradient(fwd.adjoint, ScalarGrid(cfg.grid));
    for (std::size_t i = 0; i < g.positions.size(); ++i)
    {
        EXPECT_EQ(g.positions[i], Vec3::Zero());
        EXPECT_EQ(g.normals[i], Vec3::Zero());
    }
}

TEST(PsrGradient, AdditiveInUpstream)
{
    const auto cfg = config(16);
    const auto fwd = psr::psr_forward(random_cloud(20, cfg.grid, 18), cfg);
    const auto a = random_grid(cfg.grid, 19), b = random_grid(cfg.grid, 20);
    ScalarGrid ab(cfg.grid);
    for (std::size_t k = 0; k < ab.values.size(); ++k)
        ab.values[k] = a.values[k] + b.values[k];
    const auto ga = psr::psr_gradient(fwd.adjoint, a), gb = psr::psr_gradient(fwd.adjoint, b), gab = psr::psr_gradient(fwd.adjoint, ab);
    for (std::size_t i = 0; i < ga.positions.size(); ++i)
    {
        const double s = 1.0 + gab.positions[i].norm() + gab.normals[i].norm();
        EXPECT_LT((gab.positions[i] - ga.positions[i] - gb.positions[i]).norm(), 1e-12 * s);
        EXPECT_LT((gab.normals[i] - ga.normals[i] - gb.normals[i]).norm(), 1e-12 * s);
    }
}

TEST(PsrGradient, FiniteDifferences)
{
    const auto cfg = config(16);
    const auto cloud = random_cloud(20, cfg.grid, 21);
    const auto w = random_grid(cfg.grid, 22);
    const auto fwd = psr::psr_forward(cloud, cfg);
    const auto g = psr::psr_gradient(fwd.adjoint, w);
    const double eps = 1e-4 * cfg.grid.spacing;
    auto loss = [&](const OrientedPointCloud & c) { return dot(psr::psr_forward(c, cfg).chi.values, w.values); };
    double worst = 0.0, g_max = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        g_max = std::max({g_max, g.positions[i].cwiseAbs().maxCoeff(), g.normals[i].cwiseAbs().maxCoeff()});
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a)
            for (int which = 0; which < 2; ++which)
            {
                auto p = cloud, m = cloud;
                auto & vp = which == 0 ? p.positions[i][a] : p.normals[i][a];
                auto & vm = which == 0 ? m.positions[i][a] : m.normals[i][a];
                vp += eps;
                vm -= eps;
                // normals are not renormalized here: the map is linear in them
                const double fd = (loss(p) - loss(m)) / (2 * eps);
                const double an = which == 0 ? g.positions[i][a] : g.normals[i][a];
                worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), 1e-6 * g_max));
            }
    EXPECT_LT(worst, 1e-4);
}

TEST(PsrGradient, AdjointIdentityOnTenInstances)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        const auto cfg = config(16, 1.0 + 0.2 * seed);
        const auto cloud = random_cloud(15, cfg.grid, 100 + seed);
        const auto a = random_grid(cfg.grid, 200 + seed);
        const auto fwd = psr::psr_forward(cloud, cfg);
        const auto g = psr::psr_gradient(fwd.adjoint, a);
        Rng rng(300 + seed);
        std::vector<Vec3> dx(cloud.size()), dn(cloud.size());
        double lhs = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i)
        {
            dx[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
            dn[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
            lhs += g.positions[i].dot(dx[i]) + g.normals[i].dot(dn[i]);
        }
        // J·δ by central differences; χ is piecewise quadratic in the inputs,
        // so the difference quotient is exact up to rounding within a cell
        const double eps = 1e-5 * cfg.grid.spacing;
        auto moved = [&](double s) {
            auto c = cloud;
            for (std::size_t i = 0; i < c.size(); ++i)
            {
                c.positions[i] += s * dx[i];
                c.normals[i] += s * dn[i];
            }
            return psr::psr_forward(c, cfg).chi.values;
        };
        const auto plus = moved(eps), minus = moved(-eps);
        double rhs = 0.0;
        for (std::size_t k = 0; k < plus.size(); ++k)
            rhs += a.values[k] * (plus[k] - minus[k]) / (2 * eps);
        EXPECT_LT(std::abs(lhs - rhs), 1e-6 * std::abs(rhs)) << "instance " << seed;
    }
}

TEST(PsrGradient, DetectsStaleAdjoint)
{
    const auto cfg = config(16);
    auto fwd = psr::psr_forward(random_cloud(10, cfg.grid, 23), cfg);
    fwd.adjoint.cloud.positions[0].x() += 1e-3;
    try
    {
        psr::psr_gradient(fwd.adjoint, ScalarGrid(cfg.grid));
        FAIL();
    }
    catch (const Error & e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::AdjointMismatch);
    }
    const auto fresh = psr::psr_forward(random_cloud(10, cfg.grid, 23), cfg);
    try
    {
        psr::psr_gradient(fresh.adjoint, ScalarGrid(GridSpec::cube(-1.5, 1.5, 32)));
        FAIL();
    }
    catch (const Error & e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::GridMismatch);
    }
}
