#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "grid.hpp"
#include "mesh.hpp"

namespace dgm
{
    namespace mc
    {
        /// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
        inline Vec3 corner_offset(int c) { return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1); }

        struct CubeEdge
        {
            int c0 = 0;  // lower corner
            int c1 = 0;
            int axis = 0;
        };

        inline const std::array<CubeEdge, 12> & cube_edges()
        {
            static const std::array<CubeEdge, 12> edges = [] {
                std::array<CubeEdge, 12> e {};
                int k = 0;
                for (int axis = 0; axis < 3; ++axis)
                    for (int c = 0; c < 8; ++c)
                        if (!(c & (1 << axis)))
                            e[k++] = {c, c | (1 << axis), axis};
                return e;
            }();
            return edges;
        }

        inline int edge_between(int a, int b)
        {
            const auto & edges = cube_edges();
            for (int k = 0; k < 12; ++k)
                if ((edges[k].c0 == a && edges[k].c1 == b) || (edges[k].c0 == b && edges[k].c1 == a))
                    return k;
            return -1;
        }

        struct CubeFace
        {
            std::array<int, 4> corners {};  // cyclic order
            Vec3 outward = Vec3::Zero();
        };

        inline const std::array<CubeFace, 6> & cube_faces()
        {
            static const std::array<CubeFace, 6> faces = [] {
                std::array<CubeFace, 6> f {};
                int k = 0;
                for (int axis = 0; axis < 3; ++axis)
                {
                    const int u = (axis + 1) % 3;
                    const int v = (axis + 2) % 3;
                    for (int side = 0; side < 2; ++side)
                    {
                        const int base = side << axis;
                        f[k].corners = {base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)};
                        f[k].outward = Vec3::Zero();
                        f[k].outward[axis] = side ? 1.0 : -1.0;
                        ++k;
                    }
                }
                return f;
            }();
            return faces;
        }

        /// Bitmask of faces each cube edge lies on.
        inline int edge_face_mask(int edge)
        {
            const auto & faces = cube_faces();
            const auto & e = cube_edges()[edge];
            int mask = 0;
            for (int f = 0; f < 6; ++f)
            {
                bool has0 = false, has1 = false;
                for (int c : faces[f].corners)
                {
                    has0 |= c == e.c0;
                    has1 |= c == e.c1;
                }
                if (has0 && has1)
                    mask |= 1 << f;
            }
            return mask;
        }

        struct CaseTable
        {
            // triangles as triples of cube-edge indices, per configuration
            std::array<std::vector<std::array<int, 3>>, 256> triangles;
            int unconstrained_cases = 0;
        };

        namespace detail
        {
            inline Vec3 edge_midpoint(int edge)
            {
                const auto & e = cube_edges()[edge];
                return 0.5 * (corner_offset(e.c0) + corner_offset(e.c1));
            }

            /// Triangulates a closed loop so that no diagonal joins two edge
            /// points lying on a common cube face; such a diagonal could be
            /// chosen again by the neighbouring cell and break manifoldness.
            inline bool triangulate_loop(const std::vector<int> & loop, std::vector<std::array<int, 3>> & out, bool constrained)
            {
                const int k = static_cast<int>(loop.size());
                auto adjacent = [&](int i, int j) { return j == i + 1 || (i == 0 && j == k - 1); };
                auto allowed = [&](int i, int j) {
                    if (adjacent(i, j) || !constrained)
                        return true;
                    return (edge_face_mask(loop[i]) & edge_face_mask(loop[j])) == 0;
                };
                std::map<std::pair<int, int>, int> memo;  // chosen apex, or -1 when impossible
                std::function<bool(int, int)> solve = [&](int i, int j) -> bool {
                    if (j - i < 2)
                        return true;
                    auto key = std::make_pair(i, j);
                    if (auto it = memo.find(key); it != memo.end())
                        return it->second >= 0;
                    for (int m = i + 1; m < j; ++m)
                    {
                        if (!allowed(i, m) || !allowed(m, j))
                            continue;
                        if (solve(i, m) && solve(m, j))
                        {
                            memo[key] = m;
                            return true;
                        }
                    }
                    memo[key] = -1;
                    return false;
                };
                if (!solve(0, k - 1))
                    return false;
                std::function<void(int, int)> emit = [&](int i, int j) {
                    if (j - i < 2)
                        return;
                    const int m = memo.at({i, j});
                    out.push_back({loop[i], loop[m], loop[j]});
                    emit(i, m);
                    emit(m, j);
                };
                emit(0, k - 1);
                return true;
            }

            inline std::vector<std::array<int, 3>> build_case(int config, bool & used_fallback)
            {
                const auto & faces = cube_faces();
                auto inside = [&](int c) { return (config >> c) & 1; };
                std::array<int, 12> next;
                next.fill(-1);

                for (const auto & face : faces)
                {
                    std::vector<int> crossing;  // face-local edge slots 0..3 that change sign
                    for (int s = 0; s < 4; ++s)
                        if (inside(face.corners[s]) != inside(face.corners[(s + 1) % 4]))
                            crossing.push_back(s);
                    if (crossing.empty())
                        continue;

                    auto slot_edge = [&](int s) { return edge_between(face.corners[s], face.corners[(s + 1) % 4]); };
                    std::vector<std::pair<std::pair<int, int>, Vec3>> segments;  // (slot pair, inside->outside dir)
                    if (crossing.size() == 2)
                    {
                        const int s0 = crossing[0], s1 = crossing[1];
                        const Vec3 mid = 0.5 * (edge_midpoint(slot_edge(s0)) + edge_midpoint(slot_edge(s1)));
                        Vec3 dir;
                        if ((s1 - s0) == 2)
                        {
                            Vec3 cin = Vec3::Zero(), cout = Vec3::Zero();
                            for (int c : face.corners)
                                (inside(c) ? cin : cout) += 0.5 * corner_offset(c);
                            dir = cout - cin;
                        }
                        else
                        {
                            // slots s and s+1 share corner s+1; slots 0 and 3 share corner 0
                            const int shared = (s1 - s0 == 1) ? face.corners[s1] : face.corners[0];
                            dir = inside(shared) ? Vec3(mid - corner_offset(shared)) : Vec3(corner_offset(shared) - mid);
                        }
                        segments.push_back({{s0, s1}, dir});
                    }
                    else
                    {
                        // ambiguous face: inside corners stay separated
                        for (int s = 0; s < 4; ++s)
                        {
                            const int c = face.corners[s];
                            if (!inside(c))
                                continue;
                            const int prev = (s + 3) % 4;  // slot ending at corner s
                            const Vec3 mid = 0.5 * (edge_midpoint(slot_edge(prev)) + edge_midpoint(slot_edge(s)));
                            segments.push_back({{prev, s}, Vec3(mid - corner_offset(c))});
                        }
                    }

                    for (const auto & [slots, dir] : segments)
                    {
                        int a = slot_edge(slots.first);
                        int b = slot_edge(slots.second);
                        const Vec3 tangent = dir.cross(face.outward);
                        if ((edge_midpoint(b) - edge_midpoint(a)).dot(tangent) < 0.0)
                            std::swap(a, b);
                        if (next[a] != -1)
                            throw std::logic_error("marching cubes table: inconsistent segment orientation");
                        next[a] = b;
                    }
                }

                std::vector<std::array<int, 3>> tris;
                std::array<bool, 12> seen {};
                for (int start = 0; start < 12; ++start)
                {
                    if (next[start] == -1 || seen[start])
                        continue;
                    std::vector<int> loop;
                    int e = start;
                    while (!seen[e])
                    {
                        seen[e] = true;
                        loop.push_back(e);
                        e = next[e];
                        if (e == -1)
                            throw std::logic_error("marching cubes table: open loop");
                    }
                    if (!triangulate_loop(loop, tris, true))
                    {
                        used_fallback = true;
                        triangulate_loop(loop, tris, false);
                    }
                }
                return tris;
            }
        }

        /// 256-case table derived from a fixed face rule (separate the inside
        /// corners on ambiguous faces), so neighbouring cells always agree.
        inline const CaseTable & case_table()
        {
            static const CaseTable table = [] {
                CaseTable t;
                for (int config = 0; config < 256; ++config)
                {
                    bool fallback = false;
                    t.triangles[config] = detail::build_case(config, fallback);
                    if (fallback)
                        ++t.unconstrained_cases;
                }
                return t;
            }();
            return table;
        }
    }

    /**
     * Extracts the iso-surface {χ = iso}. Nodes with χ < iso are inside;
     * faces are oriented toward increasing χ. Values exactly equal to iso are
     * raised by 1e-12 times the value scale before classification.
     */
    inline TriMesh marching_cubes(const ScalarGrid & chi, double iso = 0.0)
    {
        const GridSpec & spec = chi.spec;
        const int n = spec.resolution;
        TriMesh mesh;
        mesh.source_grid = spec;
        mesh.iso = iso;
        if (n < 2 || chi.values.size() != spec.node_count())
            return mesh;

        double scale = 0.0;
        for (double v : chi.values)
        {
            if (!std::isfinite(v))
                throw Error(ErrorKind::InvalidArgument, "indicator grid has non-finite values");
            scale = std::max(scale, std::abs(v - iso));
        }
        if (scale == 0.0)
            scale = 1.0;
        const double nudge = 1e-12 * scale;
        std::vector<double> values = chi.values;
        for (double & v : values)
            if (v == iso)
                v = iso + nudge;

        const auto & table = mc::case_table();
        const auto & edges = mc::cube_edges();
        std::vector<int> edge_vertex(spec.node_count() * 3, -1);

        auto vertex_for = [&](int i, int j, int k, int cube_edge) {
            const auto & e = edges[cube_edge];
            const int ai = i + (e.c0 & 1), aj = j + ((e.c0 >> 1) & 1), ak = k + ((e.c0 >> 2) & 1);
            const std::size_t a = spec.index(ai, aj, ak);
            const std::size_t key = a * 3 + static_cast<std::size_t>(e.axis);
            if (edge_vertex[key] >= 0)
                return edge_vertex[key];
            std::array<int, 3> bi {ai, aj, ak};
            bi[e.axis] += 1;
            const std::size_t b = spec.index(bi[0], bi[1], bi[2]);
            const double va = values[a], vb = values[b];
            const double t = (iso - va) / (vb - va);
            const Vec3 pa = spec.node_position(ai, aj, ak);
            const Vec3 pb = spec.node_position(bi[0], bi[1], bi[2]);
            const int id = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(pa + t * (pb - pa));
            mesh.provenance.push_back({a, b, va, vb, t});
            edge_vertex[key] = id;
            return id;
        };

        for (int k = 0; k + 1 < n; ++k)
            for (int j = 0; j + 1 < n; ++j)
                for (int i = 0; i + 1 < n; ++i)
                {
                    int config = 0;
                    for (int c = 0; c < 8; ++c)
                        if (values[spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))] < iso)
                            config |= 1 << c;
                    if (config == 0 || config == 255)
                        continue;
                    for (const auto & tri : table.triangles[config])
                        mesh.faces.push_back({vertex_for(i, j, k, tri[0]), vertex_for(i, j, k, tri[1]),
                                              vertex_for(i, j, k, tri[2])});
                }
        return mesh;
    }

    /// Reverse pass of marching cubes at fixed topology: each vertex moves
    /// along its grid edge as t = (iso − χ_a) / (χ_b − χ_a) changes.
    inline ScalarGrid mc_backprop(const TriMesh & mesh, const std::vector<Vec3> & dl_dvertices)
    {
        if (!mesh.has_provenance())
            throw Error(ErrorKind::NotDifferentiable, "mesh carries no grid provenance");
        if (dl_dvertices.size() != mesh.vertices.size())
            throw Error(ErrorKind::SizeMismatch, "one gradient per vertex is required");
        const GridSpec & spec = *mesh.source_grid;
        ScalarGrid grad(spec);
        const std::size_t n = static_cast<std::size_t>(spec.resolution);
        auto node_pos = [&](std::size_t idx) {
            const int i = static_cast<int>(idx % n);
            const int j = static_cast<int>((idx / n) % n);
            const int k = static_cast<int>(idx / (n * n));
            return spec.node_position(i, j, k);
        };
        for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
        {
            const auto & p = mesh.provenance[v];
            const double s = dl_dvertices[v].dot(node_pos(p.node_b) - node_pos(p.node_a));
            if (s == 0.0)
                continue;
            const double d = p.value_b - p.value_a;
            grad.values[p.node_a] += s * (mesh.iso - p.value_b) / (d * d);
            grad.values[p.node_b] += s * -(mesh.iso - p.value_a) / (d * d);
        }
        return grad;
    }
}
