#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "grid.hpp"
#include "marching_cubes.hpp"
#include "mesh.hpp"
#include "util.hpp"

namespace dgm
{
    enum class SceneShape
    {
        sphere,
        torus,
        sphere_to_torus,
        bending_bar,
    };

    inline std::string_view to_string(SceneShape s)
    {
        switch (s)
        {
            case SceneShape::sphere: return "sphere";
            case SceneShape::torus: return "torus";
            case SceneShape::sphere_to_torus: return "sphere_to_torus";
            case SceneShape::bending_bar: return "bending_bar";
        }
        return "unknown";
    }

    inline SceneShape parse_scene_shape(std::string_view name)
    {
        for (auto s : {SceneShape::sphere, SceneShape::torus, SceneShape::sphere_to_torus, SceneShape::bending_bar})
            if (to_string(s) == name)
                return s;
        throw Error(ErrorKind::InvalidArgument, "unknown scene shape '" + std::string(name) + "'");
    }

    namespace sdf
    {
        inline constexpr double sphere_radius = 0.8;
        inline constexpr double torus_major = 0.7;
        inline constexpr double torus_minor = 0.3;

        inline double sphere(const Vec3 & p, double r = sphere_radius) { return p.norm() - r; }

        /// Ring in the xy plane around the z axis.
        inline double torus(const Vec3 & p, double major = torus_major, double minor = torus_minor)
        {
            const double q = std::hypot(p.x(), p.y()) - major;
            return std::hypot(q, p.z()) - minor;
        }

        inline double box(const Vec3 & p, const Vec3 & half)
        {
            const Vec3 d = p.cwiseAbs() - half;
            return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
        }

        /// Bar along x whose centre line sags by `bend`·cos(πx / 2L) at time t.
        inline double bending_bar(const Vec3 & p, double t)
        {
            const double half_length = 0.9;
            const double bend = 0.35 * t;
            const double offset = bend * (std::cos(M_PI * p.x() / (2.0 * half_length)) - 0.5);
            return box(Vec3(p.x(), p.y() + offset, p.z()), Vec3(half_length, 0.2, 0.25)) - 0.05;
        }

        /// Signed distance (negative inside) of `shape` at time t ∈ [0, 1].
        inline double evaluate(SceneShape shape, const Vec3 & p, double t)
        {
            switch (shape)
            {
                case SceneShape::sphere: return sphere(p);
                case SceneShape::torus: return torus(p);
                case SceneShape::sphere_to_torus: return (1.0 - t) * sphere(p) + t * torus(p);
                case SceneShape::bending_bar: return bending_bar(p, t);
            }
            return 0.0;
        }
    }

    /// Samples `fn` on every node of `spec`.
    inline ScalarGrid sample_field(const GridSpec & spec, const std::function<double(const Vec3 &)> & fn)
    {
        ScalarGrid grid(spec);
        const int n = spec.resolution;
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i)
                    grid.values[spec.index(i, j, static_cast<int>(k))] = fn(spec.node_position(i, j, static_cast<int>(k)));
        });
        return grid;
    }

    struct Frame
    {
        double t = 0.0;
        OrientedPointCloud cloud;
        std::optional<TriMesh> ground_truth;
    };

    struct FrameSequence
    {
        std::vector<Frame> frames;

        void validate() const
        {
            if (frames.empty())
                throw Error(ErrorKind::EmptyInput, "sequence has no frames");
            for (std::size_t k = 0; k < frames.size(); ++k)
            {
                frames[k].cloud.validate();
                if (frames[k].cloud.empty())
                    throw Error(ErrorKind::EmptyInput, "frame has no points", k);
                if (k > 0 && !(frames[k].t > frames[k - 1].t))
                    throw Error(ErrorKind::InvalidArgument, "frame times must increase strictly", k);
            }
        }
    };

    inline double frame_time(int k, int frames) { return frames > 1 ? static_cast<double>(k) / (frames - 1) : 0.0; }

    /**
     * Analytic scene: per frame, the ground-truth mesh is marching cubes of
     * the signed distance on a `gt_resolution`³ grid over [−1.5, 1.5]³ and
     * the oriented samples are drawn from that mesh.
     */
    inline FrameSequence generate_scene(SceneShape shape, int frames, std::size_t n_points, std::uint64_t seed,
                                        int gt_resolution = 64)
    {
        if (frames < 1)
            throw Error(ErrorKind::InvalidArgument, "a scene needs at least one frame");
        if (n_points < 100)
            throw Error(ErrorKind::InvalidArgument, "a scene needs at least 100 points per frame");
        const GridSpec spec = GridSpec::cube(-1.5, 1.5, gt_resolution);
        spec.validate();
        FrameSequence seq;
        for (int k = 0; k < frames; ++k)
        {
            Frame f;
            f.t = frame_time(k, frames);
            const auto field = sample_field(spec, [&](const Vec3 & p) { return sdf::evaluate(shape, p, f.t); });
            f.ground_truth = marching_cubes(field, 0.0);
            f.ground_truth->provenance.clear();
            f.ground_truth->source_grid.reset();
            f.cloud = sample_surface(*f.ground_truth, n_points, derive_seed(seed, static_cast<std::uint64_t>(k)));
            seq.frames.push_back(std::move(f));
        }
        return seq;
    }

    /// `clusters` tight blobs of Gaussians on a sphere surface (n in total).
    inline std::vector<Gaussian> clustered_sphere_gaussians(std::size_t n, int clusters, double radius, double spread,
                                                            std::uint64_t seed)
    {
        Rng rng(seed);
        std::vector<Vec3> centers;
        for (int c = 0; c < clusters; ++c)
        {
            Vec3 v(rng.normal(), rng.normal(), rng.normal());
            centers.push_back(v.normalized());
        }
        std::vector<Gaussian> out;
        for (std::size_t i = 0; i < n; ++i)
        {
            const Vec3 & c = centers[i % centers.size()];
            Vec3 p = c + spread * Vec3(rng.normal(), rng.normal(), rng.normal());
            p = radius * p.normalized();
            Gaussian g;
            g.id = i;
            g.position = p;
            g.rotation = quat_aligning_x_to(p);
            g.scale = Vec3::Constant(0.02);
            g.opacity = 1.0;
            out.push_back(g);
        }
        return out;
    }
}
