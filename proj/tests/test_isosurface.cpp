#include <gtest/gtest.h>

#include <cmath>

#include "dgmesh/marching_cubes.hpp"
#include "dgmesh/mesh.hpp"
#include "dgmesh/scenes.hpp"

using namespace dgm;

namespace
{
    double trilinear(const ScalarGrid & g, const Vec3 & p)
    {
        const Vec3 u = (p - g.spec.origin) / g.spec.spacing;
        const int n = g.spec.resolution;
        int c[3];
        double f[3];
        for (int a = 0; a < 3; ++a)
        {
            c[a] = std::clamp(static_cast<int>(std::floor(u[a])), 0, n - 2);
            f[a] = u[a] - c[a];
        }
        double s = 0.0;
        for (int corner = 0; corner < 8; ++corner)
        {
            double w = 1.0;
            int idx[3];
            for (int a = 0; a < 3; ++a)
            {
                const int bit = (corner >> a) & 1;
                idx[a] = c[a] + bit;
                w *= bit ? f[a] : 1.0 - f[a];
            }
            s += w * g.at(idx[0], idx[1], idx[2]);
        }
        return s;
    }

    ScalarGrid random_grid(int n, std::uint64_t seed)
    {
        Rng rng(seed);
        ScalarGrid g(GridSpec::cube(-1, 1, n));
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i)
                {
                    const Vec3 p = g.spec.node_position(i, j, k);
                    // a blob plus noise, boundary kept outside
                    g.at(i, j, k) = p.norm() - 0.6 + 0.15 * rng.normal();
                    if (i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1)
                        g.at(i, j, k) = 1.0;
                }
        return g;
    }

    double linear_loss(const TriMesh & m, const std::vector<Vec3> & u)
    {
        double s = 0.0;
        for (std::size_t v = 0; v < m.vertices.size(); ++v)
            s += u[v].dot(m.vertices[v]);
        return s;
    }

    std::vector<Vec3> random_vectors(std::size_t n, Rng & rng)
    {
        std::vector<Vec3> out(n);
        for (auto & v : out)
            v = Vec3(rng.normal(), rng.normal(), rng.normal());
        return out;
    }

    TriMesh tetra()
    {
        TriMesh m;
        m.vertices = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
        m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
        return m;
    }

    TriMesh torus_mesh(int nu, int nv)
    {
        TriMesh m;
        for (int i = 0; i < nu; ++i)
            for (int j = 0; j < nv; ++j)
            {
                const double u = 2 * M_PI * i / nu, v = 2 * M_PI * j / nv;
                m.vertices.push_back(Vec3((1 + 0.3 * std::cos(v)) * std::cos(u), (1 + 0.3 * std::cos(v)) * std::sin(u), 0.3 * std::sin(v)));
            }
        auto id = [&](int i, int j) { return ((i + nu) % nu) * nv + (j + nv) % nv; };
        for (int i = 0; i < nu; ++i)
            for (int j = 0; j < nv; ++j)
            {
                m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
                m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
            }
        return m;
    }

    Vec3 face_normal(const TriMesh & m, std::size_t f)
    {
        return face_area_vector(m, f).normalized();
    }
}

TEST(MarchingCubes, AllOutsideGivesEmptyMesh)
{
    ScalarGrid g(GridSpec::cube(-1, 1, 8), 1.0);
    const auto m = marching_cubes(g);
    EXPECT_TRUE(m.empty());
    EXPECT_TRUE(m.vertices.empty());
}

TEST(MarchingCubes, SingleInsideNodeIsClosedSphere)
{
    for (int i = 1; i < 7; ++i)
        for (int j = 1; j < 7; j += 2)
            for (int k = 2; k < 7; k += 3)
            {
                ScalarGrid g(GridSpec::cube(-1, 1, 8), 1.0);
                g.at(i, j, k) = -1.0;
                const auto m = marching_cubes(g);
                const auto d = validate_mesh(m);
                EXPECT_TRUE(d.watertight());
                EXPECT_EQ(d.components, 1);
                EXPECT_EQ(d.euler_characteristic, 2);
                EXPECT_EQ(d.total_genus(), 0);
                // six edges leave the node, one vertex on each midpoint
                EXPECT_EQ(m.vertices.size(), 6u);
                const Vec3 c = g.spec.node_position(i, j, k);
                for (std::size_t f = 0; f < m.faces.size(); ++f)
                    EXPECT_GT(face_area_vector(m, f).dot(m.vertices[m.faces[f][0]] - c), 0.0);
            }
}

TEST(MarchingCubes, SphereDistanceField)
{
    const GridSpec spec = GridSpec::cube(-1.5, 1.5, 64);
    const auto g = sample_field(spec, [](const Vec3 & p) { return p.norm() - 0.8; });
    const auto m = marching_cubes(g);
    const auto d = validate_mesh(m);
    EXPECT_TRUE(d.watertight());
    EXPECT_EQ(d.components, 1);
    EXPECT_EQ(d.total_genus(), 0);
    const double h = spec.spacing;
    for (const auto & v : m.vertices)
        EXPECT_LT(std::abs(v.norm() - 0.8), 0.5 * h);
    for (std::size_t f = 0; f < m.faces.size(); ++f)
        EXPECT_GT(face_normal(m, f).dot(m.vertices[m.faces[f][0]].normalized()), 0.5);
}

TEST(MarchingCubes, TorusHasGenusOne)
{
    const GridSpec spec = GridSpec::cube(-1.5, 1.5, 48);
    const auto g = sample_field(spec, [](const Vec3 & p) { return sdf::torus(p); });
    const auto d = validate_mesh(marching_cubes(g));
    EXPECT_TRUE(d.watertight());
    EXPECT_EQ(d.total_genus(), 1);
    EXPECT_EQ(d.euler_characteristic, 0);
}

TEST(MarchingCubes, VerticesLieOnTheIsoLevel)
{
    for (std::uint64_t s = 0; s < 5; ++s)
    {
        const auto g = random_grid(12, s);
        for (double iso : {0.0, 0.1})
        {
            const auto m = marching_cubes(g, iso);
            ASSERT_FALSE(m.empty());
            EXPECT_TRUE(validate_mesh(m).watertight());
            for (const auto & v : m.vertices)
                EXPECT_NEAR(trilinear(g, v), iso, 1e-9);
        }
    }
}

TEST(MarchingCubes, ExactIsoValuesDoNotBreakTopology)
{
    ScalarGrid g(GridSpec::cube(-1, 1, 8), 1.0);
    for (int k = 2; k < 5; ++k)
        for (int j = 2; j < 5; ++j)
            for (int i = 2; i < 5; ++i)
                g.at(i, j, k) = (i == 3 && j == 3 && k == 3) ? -1.0 : 0.0;
    const auto d = validate_mesh(marching_cubes(g));
    EXPECT_TRUE(d.watertight());
    EXPECT_EQ(d.euler_characteristic, 2);
}

TEST(McBackprop, ZeroUpstreamGivesZero)
{
    const auto g = random_grid(10, 1);
    const auto m = marching_cubes(g);
    const auto grad = mc_backprop(m, std::vector<Vec3>(m.vertices.size(), Vec3::Zero()));
    for (double v : grad.values)
        EXPECT_EQ(v, 0.0);
}

TEST(McBackprop, SingleEdgeClosedForm)
{
    // one inside node: each vertex sits at t = (0 − χa)/(χb − χa) along its edge
    ScalarGrid g(GridSpec::cube(0, 7, 8), 3.0);
    g.at(3, 3, 3) = -1.0;
    const auto m = marching_cubes(g);
    std::vector<Vec3> up(m.vertices.size(), Vec3::Zero());
    std::size_t pick = 0;
    for (std::size_t v = 0; v < m.vertices.size(); ++v)
        if (m.vertices[v].x() > 3.1)
            pick = v;
    ASSERT_NEAR(m.vertices[pick].x(), 3.25, 1e-12);
    up[pick] = Vec3::UnitX();
    const auto grad = mc_backprop(m, up);
    // x = 3 + χa/(χa − χb) with χa = −1, χb = 3 and h = 1
    const double a = -1.0, b = 3.0;
    EXPECT_NEAR(grad.at(3, 3, 3), -b / ((a - b) * (a - b)), 1e-14);
    EXPECT_NEAR(grad.at(4, 3, 3), a / ((a - b) * (a - b)), 1e-14);
    double others = 0.0;
    for (double v : grad.values)
        others += std::abs(v);
    EXPECT_NEAR(others, std::abs(grad.at(3, 3, 3)) + std::abs(grad.at(4, 3, 3)), 1e-14);
}

TEST(McBackprop, MatchesFiniteDifferences)
{
    Rng rng(2);
    const auto g = random_grid(10, 3);
    const auto m = marching_cubes(g);
    const auto up = random_vectors(m.vertices.size(), rng);
    const auto grad = mc_backprop(m, up);
    int checked = 0;
    for (std::size_t idx = 0; idx < g.values.size() && checked < 40; ++idx)
    {
        if (grad.values[idx] == 0.0)
            continue;
        ++checked;
        const double eps = 1e-7;
        ScalarGrid p = g, q = g;
        p.values[idx] += eps;
        q.values[idx] -= eps;
        const auto mp = marching_cubes(p), mq = marching_cubes(q);
        ASSERT_EQ(mp.vertices.size(), m.vertices.size());
        ASSERT_EQ(mq.vertices.size(), m.vertices.size());
        const double fd = (linear_loss(mp, up) - linear_loss(mq, up)) / (2 * eps);
        EXPECT_NEAR(grad.values[idx], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
    EXPECT_GT(checked, 10);
}

TEST(McBackprop, LinearInUpstream)
{
    Rng rng(4);
    const auto g = random_grid(10, 5);
    const auto m = marching_cubes(g);
    const auto u1 = random_vectors(m.vertices.size(), rng), u2 = random_vectors(m.vertices.size(), rng);
    std::vector<Vec3> mix(m.vertices.size());
    for (std::size_t v = 0; v < mix.size(); ++v)
        mix[v] = 2.0 * u1[v] - 0.5 * u2[v];
    const auto g1 = mc_backprop(m, u1), g2 = mc_backprop(m, u2), gm = mc_backprop(m, mix);
    for (std::size_t i = 0; i < gm.values.size(); ++i)
        EXPECT_NEAR(gm.values[i], 2.0 * g1.values[i] - 0.5 * g2.values[i], 1e-9 * (1 + std::abs(gm.values[i])));
}

TEST(McBackprop, AdjointIdentity)
{
    for (std::uint64_t s = 0; s < 10; ++s)
    {
        Rng rng(100 + s);
        const auto g = random_grid(9, 10 + s);
        const auto m = marching_cubes(g);
        const auto up = random_vectors(m.vertices.size(), rng);
        const auto grad = mc_backprop(m, up);
        ScalarGrid dir(g.spec);
        for (auto & v : dir.values)
            v = rng.normal();
        // <J^T u, d> against the directional derivative of <u, x(χ)>
        double lhs = 0.0;
        for (std::size_t i = 0; i < dir.values.size(); ++i)
            lhs += grad.values[i] * dir.values[i];
        const double eps = 1e-8;
        ScalarGrid p = g, q = g;
        for (std::size_t i = 0; i < dir.values.size(); ++i)
        {
            p.values[i] += eps * dir.values[i];
            q.values[i] -= eps * dir.values[i];
        }
        const auto mp = marching_cubes(p), mq = marching_cubes(q);
        ASSERT_EQ(mp.faces, m.faces);
        ASSERT_EQ(mq.faces, m.faces);
        const double rhs = (linear_loss(mp, up) - linear_loss(mq, up)) / (2 * eps);
        EXPECT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(rhs)));
    }
}

TEST(McBackprop, NeedsProvenance)
{
    try
    {
        mc_backprop(tetra(), std::vector<Vec3>(4, Vec3::Zero()));
        FAIL();
    }
    catch (const Error & e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::NotDifferentiable);
    }
}

TEST(FaceCentroids, Examples)
{
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(3, 0, 0), Vec3(0, 3, 0), Vec3(3, 3, 3)};
    m.faces = {{0, 1, 2}, {1, 3, 2}};
    const auto c = face_centroids(m);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_LT((c[0] - Vec3(1, 1, 0)).norm(), 1e-15);
    EXPECT_LT((c[1] - Vec3(2, 2, 1)).norm(), 1e-15);
    EXPECT_TRUE(face_centroids(TriMesh{}).empty());
}

TEST(Laplacian, FlatPatchInteriorIsZero)
{
    TriMesh m;
    const int n = 5;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            m.vertices.push_back(Vec3(i, j, 0));
    for (int j = 0; j + 1 < n; ++j)
        for (int i = 0; i + 1 < n; ++i)
        {
            const int a = j * n + i;
            // alternate diagonals so every interior one-ring is symmetric
            if ((i + j) % 2 == 0)
            {
                m.faces.push_back({a, a + 1, a + n + 1});
                m.faces.push_back({a, a + n + 1, a + n});
            }
            else
            {
                m.faces.push_back({a, a + 1, a + n});
                m.faces.push_back({a + 1, a + n + 1, a + n});
            }
        }
    const auto r = laplacian_energy(m);
    for (int j = 1; j + 1 < n; ++j)
        for (int i = 1; i + 1 < n; ++i)
            EXPECT_LT(r.delta[j * n + i].norm(), 1e-15);
}

TEST(Laplacian, RegularTetrahedronByHand)
{
    const auto m = tetra();
    const auto r = laplacian_energy(m);
    // δ_i = v_i − (sum of the others)/3 = (4/3) v_i since the centroid is 0
    double e = 0.0;
    for (int i = 0; i < 4; ++i)
    {
        EXPECT_LT((r.delta[i] - (4.0 / 3.0) * m.vertices[i]).norm(), 1e-15);
        e += (16.0 / 9.0) * m.vertices[i].squaredNorm();
    }
    EXPECT_NEAR(r.energy, e / 4.0, 1e-14);
    EXPECT_NEAR(r.energy, 16.0 / 3.0, 1e-14);
}

TEST(Laplacian, GradientMatchesFiniteDifferences)
{
    const auto m = marching_cubes(random_grid(12, 7));
    const auto r = laplacian_energy(m);
    Rng rng(8);
    for (int probe = 0; probe < 30; ++probe)
    {
        const std::size_t v = rng.below(m.vertices.size());
        const int a = static_cast<int>(rng.below(3));
        const double eps = 1e-6;
        TriMesh p = m, q = m;
        p.vertices[v][a] += eps;
        q.vertices[v][a] -= eps;
        const double fd = (laplacian_energy(p).energy - laplacian_energy(q).energy) / (2 * eps);
        EXPECT_NEAR(r.gradient[v][a], fd, 1e-8 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Laplacian, TranslationInvariant)
{
    const auto m = torus_mesh(10, 7);
    const auto a = laplacian_energy(m);
    const auto b = laplacian_energy(translated(m, Vec3(5, -3, 2)));
    EXPECT_NEAR(a.energy, b.energy, 1e-12);
    for (std::size_t i = 0; i < a.gradient.size(); ++i)
        EXPECT_LT((a.gradient[i] - b.gradient[i]).norm(), 1e-12);
}

TEST(ValidateMesh, Tetrahedron)
{
    const auto d = validate_mesh(tetra());
    EXPECT_TRUE(d.watertight());
    EXPECT_EQ(d.euler_characteristic, 2);
    EXPECT_EQ(d.components, 1);
    EXPECT_EQ(d.total_genus(), 0);
    EXPECT_EQ(d.boundary_edges, 0);
}

TEST(ValidateMesh, TorusGenusOne)
{
    const auto d = validate_mesh(torus_mesh(8, 8));
    EXPECT_TRUE(d.watertight());
    EXPECT_EQ(d.euler_characteristic, 0);
    EXPECT_EQ(d.total_genus(), 1);
}

TEST(ValidateMesh, OpenAndMisoriented)
{
    auto open = tetra();
    open.faces.pop_back();
    const auto d = validate_mesh(open);
    EXPECT_FALSE(d.watertight());
    EXPECT_EQ(d.boundary_edges, 3);
    EXPECT_EQ(d.total_genus(), 0);
    ASSERT_EQ(d.component_info.size(), 1u);
    EXPECT_FALSE(d.component_info[0].closed);

    auto flipped = tetra();
    std::swap(flipped.faces[0][1], flipped.faces[0][2]);
    const auto f = validate_mesh(flipped);
    EXPECT_TRUE(f.edge_manifold);
    EXPECT_FALSE(f.consistent_orientation);
}

TEST(ValidateMesh, TwoComponents)
{
    auto m = tetra();
    const auto t = translated(torus_mesh(8, 6), Vec3(10, 0, 0));
    const int off = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), t.vertices.begin(), t.vertices.end());
    for (auto f : t.faces)
        m.faces.push_back({f[0] + off, f[1] + off, f[2] + off});
    const auto d = validate_mesh(m);
    EXPECT_EQ(d.components, 2);
    EXPECT_EQ(d.total_genus(), 1);
    EXPECT_EQ(d.euler_characteristic, 2);
}

TEST(SampleSurface, PointsLieOnTheirFaces)
{
    const auto m = uv_sphere(1.0, 12, 8);
    const auto c = sample_surface(m, 2000, 3);
    ASSERT_EQ(c.size(), 2000u);
    for (std::size_t s = 0; s < c.size(); ++s)
    {
        bool found = false;
        for (std::size_t f = 0; f < m.faces.size() && !found; ++f)
        {
            const Vec3 a = m.vertices[m.faces[f][0]], b = m.vertices[m.faces[f][1]], d = m.vertices[m.faces[f][2]];
            const Vec3 n = (b - a).cross(d - a);
            const Vec3 p = c.positions[s];
            if (std::abs(n.normalized().dot(p - a)) > 1e-12)
                continue;
            // barycentric coordinates by sub-areas
            const double w0 = (b - p).cross(d - p).dot(n) / n.squaredNorm();
            const double w1 = (d - p).cross(a - p).dot(n) / n.squaredNorm();
            const double w2 = 1.0 - w0 - w1;
            if (w0 >= -1e-12 && w1 >= -1e-12 && w2 >= -1e-12)
            {
                found = true;
                EXPECT_LT((c.normals[s] - n.normalized()).norm(), 1e-12);
            }
        }
        EXPECT_TRUE(found);
    }
}

TEST(SampleSurface, AreaWeighted)
{
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(10, 0, 0), Vec3(13, 0, 0), Vec3(10, 1, 0)};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    const std::size_t n = 100000;
    const auto c = sample_surface(m, n, 5);
    std::size_t big = 0;
    for (const auto & p : c.positions)
        if (p.x() >= 10.0)
            ++big;
    EXPECT_NEAR(static_cast<double>(big) / n, 0.75, 0.02);
}

TEST(SampleSurface, Deterministic)
{
    const auto m = torus_mesh(12, 8);
    const auto a = sample_surface(m, 500, 11), b = sample_surface(m, 500, 11), c = sample_surface(m, 500, 12);
    EXPECT_EQ(a.positions, b.positions);
    EXPECT_EQ(a.normals, b.normals);
    EXPECT_NE(a.positions, c.positions);
}

TEST(SampleSurface, RejectsEmpty)
{
    EXPECT_THROW(sample_surface(TriMesh{}, 10, 1), Error);
}

TEST(UvSphere, ClosedAndOutward)
{
    const auto m = uv_sphere(2.0, 16, 9, Vec3(1, 2, 3));
    EXPECT_EQ(m.faces.size(), static_cast<std::size_t>(2 * 16 + 2 * 16 * 7));
    const auto d = validate_mesh(m);
    EXPECT_TRUE(d.watertight());
    EXPECT_EQ(d.total_genus(), 0);
    for (std::size_t f = 0; f < m.faces.size(); ++f)
        EXPECT_GT(face_area_vector(m, f).dot(m.vertices[m.faces[f][0]] - Vec3(1, 2, 3)), 0.0);
    for (const auto & v : m.vertices)
        EXPECT_NEAR((v - Vec3(1, 2, 3)).norm(), 2.0, 1e-12);
}
