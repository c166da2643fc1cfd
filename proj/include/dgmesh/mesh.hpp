#pragma once

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include "core.hpp"
#include "grid.hpp"
#include "util.hpp"

namespace dgm
{
    /// Where a marching-cubes vertex came from: the grid edge (a, b), the
    /// (possibly nudged) values at both ends, and the interpolation parameter.
    struct VertexProvenance
    {
        std::size_t node_a = 0;
        std::size_t node_b = 0;
        double value_a = 0.0;
        double value_b = 0.0;
        double t = 0.0;
    };

    using Face = std::array<int, 3>;

    struct TriMesh
    {
        std::vector<Vec3> vertices;
        std::vector<Face> faces;  // counterclockwise seen from outside
        // Filled by marching cubes only; empty otherwise.
        std::vector<VertexProvenance> provenance;
        std::optional<GridSpec> source_grid;
        double iso = 0.0;

        bool empty() const { return faces.empty(); }
        bool has_provenance() const { return source_grid.has_value() && provenance.size() == vertices.size(); }

        void validate_indices() const
        {
            const int nv = static_cast<int>(vertices.size());
            for (std::size_t f = 0; f < faces.size(); ++f)
            {
                const auto & t = faces[f];
                for (int k = 0; k < 3; ++k)
                    if (t[k] < 0 || t[k] >= nv)
                        throw Error(ErrorKind::InvalidArgument, "face index out of range", f);
                if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                    throw Error(ErrorKind::DegenerateMesh, "face repeats a vertex", f);
            }
        }
    };

    inline std::vector<Vec3> face_centroids(const TriMesh & mesh)
    {
        std::vector<Vec3> out;
        out.reserve(mesh.faces.size());
        for (const auto & f : mesh.faces)
            out.push_back((mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0);
        return out;
    }

    /// Unnormalized face normal (twice the area).
    inline Vec3 face_area_vector(const TriMesh & mesh, std::size_t f)
    {
        const auto & t = mesh.faces[f];
        return (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    }

    inline double mean_edge_length(const TriMesh & mesh)
    {
        if (mesh.faces.empty())
            return 0.0;
        double sum = 0.0;
        for (const auto & f : mesh.faces)
            for (int k = 0; k < 3; ++k)
                sum += (mesh.vertices[f[k]] - mesh.vertices[f[(k + 1) % 3]]).norm();
        return sum / (3.0 * static_cast<double>(mesh.faces.size()));
    }

    inline TriMesh translated(TriMesh mesh, const Vec3 & offset)
    {
        for (auto & v : mesh.vertices)
            v += offset;
        return mesh;
    }

    namespace detail
    {
        /// Sorted undirected edges with, for each, the list of (face, forward?) uses.
        struct EdgeUse
        {
            int a = 0;
            int b = 0;
            int face = 0;
            bool forward = true;  // the face traverses a -> b
        };

        inline std::vector<EdgeUse> collect_edge_uses(const TriMesh & mesh)
        {
            std::vector<EdgeUse> uses;
            uses.reserve(mesh.faces.size() * 3);
            for (std::size_t f = 0; f < mesh.faces.size(); ++f)
                for (int k = 0; k < 3; ++k)
                {
                    const int u = mesh.faces[f][k];
                    const int v = mesh.faces[f][(k + 1) % 3];
                    uses.push_back({std::min(u, v), std::max(u, v), static_cast<int>(f), u < v});
                }
            std::sort(uses.begin(), uses.end(), [](const EdgeUse & x, const EdgeUse & y) {
                return std::tie(x.a, x.b, x.face) < std::tie(y.a, y.b, y.face);
            });
            return uses;
        }

        struct UnionFind
        {
            std::vector<int> parent;
            explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
            int find(int x)
            {
                while (parent[x] != x)
                {
                    parent[x] = parent[parent[x]];
                    x = parent[x];
                }
                return x;
            }
            void unite(int a, int b)
            {
                a = find(a);
                b = find(b);
                if (a != b)
                    parent[std::max(a, b)] = std::min(a, b);
            }
        };
    }

    struct ComponentInfo
    {
        int vertices = 0;
        int edges = 0;
        int faces = 0;
        int euler = 0;
        bool closed = false;
        // Only meaningful for closed components.
        int genus = 0;
    };

    struct MeshDiagnostics
    {
        bool edge_manifold = false;
        bool consistent_orientation = false;
        int boundary_edges = 0;
        int nonmanifold_edges = 0;
        int components = 0;
        long euler_characteristic = 0;
        std::vector<ComponentInfo> component_info;

        bool watertight() const { return edge_manifold && consistent_orientation; }

        /// Sum of genera over closed components.
        int total_genus() const
        {
            int g = 0;
            for (const auto & c : component_info)
                if (c.closed)
                    g += c.genus;
            return g;
        }
    };

    inline MeshDiagnostics validate_mesh(const TriMesh & mesh)
    {
        MeshDiagnostics d;
        const auto uses = detail::collect_edge_uses(mesh);
        const int nv = static_cast<int>(mesh.vertices.size());
        detail::UnionFind uf(mesh.vertices.size());
        for (const auto & f : mesh.faces)
        {
            uf.unite(f[0], f[1]);
            uf.unite(f[1], f[2]);
        }

        std::vector<int> referenced(mesh.vertices.size(), 0);
        for (const auto & f : mesh.faces)
            for (int k = 0; k < 3; ++k)
                referenced[f[k]] = 1;

        std::map<int, ComponentInfo> comps;
        for (int v = 0; v < nv; ++v)
            if (referenced[v])
            {
                auto & c = comps[uf.find(v)];
                c.vertices += 1;
                c.closed = true;
            }
        for (const auto & f : mesh.faces)
            comps[uf.find(f[0])].faces += 1;

        long edge_count = 0;
        bool manifold = true;
        bool oriented = true;
        for (std::size_t i = 0; i < uses.size();)
        {
            std::size_t j = i;
            while (j < uses.size() && uses[j].a == uses[i].a && uses[j].b == uses[i].b)
                ++j;
            const std::size_t count = j - i;
            ++edge_count;
            auto & c = comps[uf.find(uses[i].a)];
            c.edges += 1;
            if (count != 2)
            {
                manifold = false;
                c.closed = false;
                if (count == 1)
                    ++d.boundary_edges;
                else
                    ++d.nonmanifold_edges;
            }
            else if (uses[i].forward == uses[i + 1].forward)
            {
                oriented = false;
            }
            i = j;
        }

        d.edge_manifold = manifold;
        d.consistent_orientation = oriented;
        d.components = static_cast<int>(comps.size());
        d.euler_characteristic = static_cast<long>(nv) - edge_count + static_cast<long>(mesh.faces.size());
        for (auto & [root, c] : comps)
        {
            c.euler = c.vertices - c.edges + c.faces;
            if (c.closed)
                c.genus = (2 - c.euler) / 2;
            d.component_info.push_back(c);
        }
        return d;
    }

    struct LaplacianResult
    {
        double energy = 0.0;
        std::vector<Vec3> delta;     // δ_i = v_i − mean of one-ring
        std::vector<Vec3> gradient;  // d energy / d v_i
        int isolated_vertices = 0;
    };

    /// Uniform-weight Laplacian energy (1/n) Σ ‖δ_i‖², n = vertex count.
    inline LaplacianResult laplacian_energy(const TriMesh & mesh)
    {
        LaplacianResult out;
        const std::size_t nv = mesh.vertices.size();
        out.delta.assign(nv, Vec3::Zero());
        out.gradient.assign(nv, Vec3::Zero());
        if (nv == 0)
            return out;

        std::vector<std::vector<int>> ring(nv);
        const auto uses = detail::collect_edge_uses(mesh);
        for (std::size_t i = 0; i < uses.size(); ++i)
        {
            if (i > 0 && uses[i].a == uses[i - 1].a && uses[i].b == uses[i - 1].b)
                continue;
            ring[uses[i].a].push_back(uses[i].b);
            ring[uses[i].b].push_back(uses[i].a);
        }
        for (auto & r : ring)
            std::sort(r.begin(), r.end());

        CompensatedSum energy;
        for (std::size_t i = 0; i < nv; ++i)
        {
            if (ring[i].empty())
            {
                ++out.isolated_vertices;
                continue;
            }
            Vec3 mean = Vec3::Zero();
            for (int k : ring[i])
                mean += mesh.vertices[k];
            mean /= static_cast<double>(ring[i].size());
            out.delta[i] = mesh.vertices[i] - mean;
            energy.add(out.delta[i].squaredNorm());
        }
        const double inv_n = 1.0 / static_cast<double>(nv);
        out.energy = energy.value() * inv_n;

        // dE/dv = (2/n) (I − W)ᵀ δ
        for (std::size_t i = 0; i < nv; ++i)
        {
            if (ring[i].empty())
                continue;
            const Vec3 g = 2.0 * inv_n * out.delta[i];
            out.gradient[i] += g;
            const double w = 1.0 / static_cast<double>(ring[i].size());
            for (int k : ring[i])
                out.gradient[k] -= w * g;
        }
        return out;
    }

    /**
     * Area-weighted face choice followed by uniform barycentric sampling.
     * Normals are the (unit) face normals.
     */
    inline OrientedPointCloud sample_surface(const TriMesh & mesh, std::size_t n, std::uint64_t seed)
    {
        if (mesh.faces.empty())
            throw Error(ErrorKind::DegenerateMesh, "cannot sample an empty mesh");
        std::vector<double> cdf(mesh.faces.size());
        double total = 0.0;
        for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        {
            total += 0.5 * face_area_vector(mesh, f).norm();
            cdf[f] = total;
        }
        if (!(total > 0.0))
            throw Error(ErrorKind::DegenerateMesh, "mesh has zero total area");

        Rng rng(seed);
        OrientedPointCloud cloud;
        cloud.positions.reserve(n);
        cloud.normals.reserve(n);
        for (std::size_t s = 0; s < n; ++s)
        {
            const double pick = rng.uniform() * total;
            auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
            std::size_t f = static_cast<std::size_t>(std::distance(cdf.begin(), it));
            f = std::min(f, mesh.faces.size() - 1);
            // skip zero-area faces that an exact boundary hit could land on
            while (0.5 * face_area_vector(mesh, f).norm() <= 0.0 && f + 1 < mesh.faces.size())
                ++f;
            const double r1 = std::sqrt(rng.uniform());
            const double r2 = rng.uniform();
            const double b0 = 1.0 - r1;
            const double b1 = r1 * (1.0 - r2);
            const double b2 = r1 * r2;
            const auto & t = mesh.faces[f];
            cloud.positions.push_back(b0 * mesh.vertices[t[0]] + b1 * mesh.vertices[t[1]] + b2 * mesh.vertices[t[2]]);
            cloud.normals.push_back(face_area_vector(mesh, f).normalized());
        }
        return cloud;
    }
    /// Latitude/longitude sphere: 2·slices cap triangles plus 2·slices·(stacks − 2) band triangles.
    inline TriMesh uv_sphere(double radius, int slices, int stacks, const Vec3 & center = Vec3::Zero())
    {
        if (slices < 3 || stacks < 2 || !(radius > 0.0))
            throw Error(ErrorKind::InvalidArgument, "uv sphere needs slices >= 3, stacks >= 2 and a positive radius");
        TriMesh mesh;
        mesh.vertices.push_back(center + Vec3(0, 0, radius));
        for (int i = 1; i < stacks; ++i)
        {
            const double theta = M_PI * i / stacks;
            for (int j = 0; j < slices; ++j)
            {
                const double phi = 2.0 * M_PI * j / slices;
                mesh.vertices.push_back(center + radius * Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)));
            }
        }
        const int south = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(center + Vec3(0, 0, -radius));
        auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
        for (int j = 0; j < slices; ++j)
            mesh.faces.push_back({0, ring(1, j), ring(1, j + 1)});
        for (int i = 1; i + 1 < stacks; ++i)
            for (int j = 0; j < slices; ++j)
            {
                mesh.faces.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
                mesh.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
            }
        for (int j = 0; j < slices; ++j)
            mesh.faces.push_back({south, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
        return mesh;
    }
}
