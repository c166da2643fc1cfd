#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "core.hpp"
#include "deform.hpp"
#include "mesh.hpp"
#include "spatial_hash.hpp"
#include "util.hpp"

namespace dgm
{
    enum class MatchingMode
    {
        radius,   // nearest centroid, only when it lies within r_s
        nearest,  // nearest centroid, unconditionally
    };

    struct AnchorConfig
    {
        // Search radius; 0 means `radius_factor` times the mean edge length
        // of the mesh being anchored to.
        double r_s = 0.0;
        double radius_factor = 1.0;
        int interval = 100;
        MatchingMode mode = MatchingMode::radius;

        void validate() const
        {
            if (!(r_s >= 0.0) || !std::isfinite(r_s))
                throw Error(ErrorKind::InvalidArgument, "r_s must be a non-negative finite length");
            if (r_s == 0.0 && !(radius_factor > 0.0))
                throw Error(ErrorKind::InvalidArgument, "radius factor must be positive");
            if (interval < 1)
                throw Error(ErrorKind::InvalidArgument, "anchoring interval must be at least 1");
        }

        double radius_for(const TriMesh & mesh) const { return r_s > 0.0 ? r_s : radius_factor * mean_edge_length(mesh); }
    };

    /// Gaussian ↔ face association. Indices refer to the positions passed in.
    struct FaceAssignment
    {
        std::vector<std::vector<int>> face_gaussians;  // ascending per face
        std::vector<int> gaussian_face;                // -1 when unassigned
        std::vector<double> distance;                  // to the nearest centroid
        std::vector<double> distance2;
    };

    /**
     * Associates each position with its nearest centroid (ties toward the
     * lower face index). In radius mode the association is dropped when that
     * centroid is farther than `radius`.
     */
    inline FaceAssignment match_gaussians_to_faces(const std::vector<Vec3> & positions, const std::vector<Vec3> & centroids,
                                                   MatchingMode mode, double radius)
    {
        if (centroids.empty())
            throw Error(ErrorKind::EmptyInput, "matching needs at least one face");
        FaceAssignment out;
        out.face_gaussians.resize(centroids.size());
        out.gaussian_face.assign(positions.size(), -1);
        out.distance.assign(positions.size(), 0.0);
        out.distance2.assign(positions.size(), 0.0);
        const UniformGridIndex index(centroids);
        std::vector<int> nearest(positions.size(), -1);
        parallel_for(positions.size(), [&](std::size_t i) {
            const auto hit = index.nearest(positions[i]);
            nearest[i] = hit.index;
            out.distance2[i] = hit.distance2;
            out.distance[i] = std::sqrt(hit.distance2);
        });
        const double r2 = radius * radius;
        for (std::size_t i = 0; i < positions.size(); ++i)
        {
            if (mode == MatchingMode::radius && !(out.distance2[i] <= r2))
                continue;
            out.gaussian_face[i] = nearest[i];
            out.face_gaussians[nearest[i]].push_back(static_cast<int>(i));
        }
        return out;
    }

    inline FaceAssignment match_gaussians_to_faces(const std::vector<Vec3> & positions, const std::vector<Vec3> & centroids,
                                                   const AnchorConfig & cfg, double radius)
    {
        return match_gaussians_to_faces(positions, centroids, cfg.mode, radius);
    }

    /// Fraction of centroids with at least one position within `radius`.
    inline double face_coverage(const std::vector<Vec3> & positions, const std::vector<Vec3> & centroids, double radius)
    {
        if (centroids.empty())
            return 0.0;
        if (positions.empty())
            return 0.0;
        const UniformGridIndex index(positions);
        std::size_t covered = 0;
        for (const auto & c : centroids)
        {
            const auto hit = index.nearest(c);
            if (hit.distance2 <= radius * radius)
                ++covered;
        }
        return static_cast<double>(covered) / static_cast<double>(centroids.size());
    }

    /// Mean of K Gaussians; quaternions are sign-aligned to the first one.
    inline Gaussian merge_gaussians(const std::vector<Gaussian> & group, std::uint64_t id)
    {
        if (group.empty())
            throw Error(ErrorKind::EmptyInput, "cannot merge an empty group");
        Gaussian out;
        out.id = id;
        out.position = Vec3::Zero();
        out.scale = Vec3::Zero();
        out.opacity = 0.0;
        Quat q_sum = Quat::Zero();
        const Quat & ref = group.front().rotation;
        for (const auto & g : group)
        {
            out.position += g.position;
            out.scale += g.scale;
            out.opacity += g.opacity;
            q_sum += g.rotation.dot(ref) < 0.0 ? Quat(-g.rotation) : g.rotation;
        }
        const double k = static_cast<double>(group.size());
        out.position /= k;
        out.scale /= k;
        out.opacity /= k;
        const double n = q_sum.norm();
        out.rotation = n > 1e-9 * k ? Quat(q_sum / n) : ref;
        return out;
    }

    struct AnchorLoss
    {
        double value = 0.0;
        int pairs = 0;
        bool defined = false;  // false when no face has exactly one gaussian
    };

    /// Mean squared distance over faces holding exactly one gaussian.
    inline AnchorLoss anchor_loss(const FaceAssignment & assignment, const std::vector<Vec3> & positions)
    {
        if (assignment.gaussian_face.size() != positions.size())
            throw Error(ErrorKind::SizeMismatch, "assignment does not match the positions");
        AnchorLoss out;
        CompensatedSum sum;
        for (const auto & members : assignment.face_gaussians)
            if (members.size() == 1)
            {
                sum.add(assignment.distance2[members[0]]);
                ++out.pairs;
            }
        if (out.pairs > 0)
        {
            out.value = sum.value() / out.pairs;
            out.defined = true;
        }
        return out;
    }

    struct AnchorLossGradient
    {
        AnchorLoss loss;
        std::vector<Vec3> positions;  // dL/dx per gaussian
        std::vector<Vec3> vertices;   // dL/dv per mesh vertex through the centroids
    };

    /// anchor_loss and its gradient, the assignment held fixed.
    inline AnchorLossGradient anchor_loss_gradient(const FaceAssignment & assignment, const std::vector<Vec3> & positions,
                                                   const TriMesh & mesh)
    {
        AnchorLossGradient out;
        out.loss = anchor_loss(assignment, positions);
        out.positions.assign(positions.size(), Vec3::Zero());
        out.vertices.assign(mesh.vertices.size(), Vec3::Zero());
        if (!out.loss.defined)
            return out;
        const double w = 2.0 / out.loss.pairs;
        for (std::size_t f = 0; f < assignment.face_gaussians.size(); ++f)
        {
            const auto & members = assignment.face_gaussians[f];
            if (members.size() != 1)
                continue;
            const auto & tri = mesh.faces[f];
            const Vec3 c = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
            const Vec3 g = w * (positions[members[0]] - c);
            out.positions[members[0]] += g;
            for (int k = 0; k < 3; ++k)
                out.vertices[tri[k]] -= g / 3.0;
        }
        return out;
    }

    /// Coefficient of variation of nearest-neighbour distances.
    inline double uniformity_metric(const std::vector<Vec3> & positions)
    {
        if (positions.size() < 2)
            throw Error(ErrorKind::InvalidArgument, "uniformity needs at least two points");
        const UniformGridIndex index(positions);
        std::vector<double> d(positions.size());
        parallel_for(positions.size(), [&](std::size_t i) {
            d[i] = std::sqrt(index.nearest(positions[i], static_cast<int>(i)).distance2);
        });
        CompensatedSum s;
        for (double v : d)
            s.add(v);
        const double mean = s.value() / static_cast<double>(d.size());
        if (mean == 0.0)
            return 0.0;
        CompensatedSum var;
        for (double v : d)
            var.add((v - mean) * (v - mean));
        return std::sqrt(var.value() / static_cast<double>(d.size())) / mean;
    }

    struct AnchorReport
    {
        int faces = 0;
        int merges = 0;            // faces whose gaussians were merged
        int merged_gaussians = 0;  // originals removed by merging
        int creations = 0;
        int kept = 0;
        int orphans = 0;  // gaussians outside every face's radius
        double radius = 0.0;
        double coverage_before = 0.0;
        double coverage_after = 0.0;
        double uniformity_before = 0.0;
        double uniformity_after = 0.0;
        std::vector<std::uint64_t> removed_ids;
        std::vector<Gaussian> removed;           // deformed copies at removal, by id
        std::vector<std::uint64_t> created_ids;  // merged and newly created
    };

    struct AnchorResult
    {
        CanonicalSet canonical;
        AnchorLoss loss;
        AnchorReport report;
    };

    /**
     * One round of mesh-guided densification and pruning at time t:
     * faces with several gaussians get their merge, empty faces get a new
     * gaussian at the centroid, and both are mapped back to canonical space
     * with the backward model. Faces with exactly one gaussian keep it.
     */
    inline AnchorResult anchor_step(const CanonicalSet & canonical, const DeformationModel & forward,
                                    const DeformationModel & backward, const TriMesh & mesh, double t, const AnchorConfig & cfg)
    {
        cfg.validate();
        if (mesh.empty())
            throw Error(ErrorKind::EmptyInput, "anchoring needs a nonempty mesh");
        AnchorResult out;
        out.canonical = canonical;
        auto & rep = out.report;
        rep.faces = static_cast<int>(mesh.faces.size());
        rep.radius = cfg.radius_for(mesh);

        const auto centroids = face_centroids(mesh);
        const auto deformed = deform_all(forward, canonical.gaussians(), t);
        std::vector<Vec3> positions(deformed.size());
        for (std::size_t i = 0; i < deformed.size(); ++i)
            positions[i] = deformed[i].position;

        const auto assignment = match_gaussians_to_faces(positions, centroids, cfg.mode, rep.radius);
        out.loss = anchor_loss(assignment, positions);
        for (int f : assignment.gaussian_face)
            if (f < 0)
                ++rep.orphans;
        rep.coverage_before = face_coverage(positions, centroids, rep.radius);
        if (positions.size() >= 2)
            rep.uniformity_before = uniformity_metric(positions);

        std::unordered_set<std::uint64_t> removed;
        std::vector<Gaussian> appended;
        for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        {
            const auto & members = assignment.face_gaussians[f];
            if (members.size() == 1)
            {
                ++rep.kept;
                continue;
            }
            Gaussian fresh;
            if (members.size() > 1)
            {
                std::vector<Gaussian> group;
                group.reserve(members.size());
                for (int m : members)
                {
                    group.push_back(deformed[m]);
                    removed.insert(deformed[m].id);
                    rep.removed.push_back(deformed[m]);
                }
                fresh = merge_gaussians(group, 0);
                ++rep.merges;
                rep.merged_gaussians += static_cast<int>(members.size());
            }
            else
            {
                const auto & tri = mesh.faces[f];
                double edge = 0.0;
                for (int k = 0; k < 3; ++k)
                    edge += (mesh.vertices[tri[k]] - mesh.vertices[tri[(k + 1) % 3]]).norm();
                edge /= 3.0;
                const Vec3 area = face_area_vector(mesh, f);
                fresh.position = centroids[f];
                fresh.rotation = area.norm() > 0.0 ? quat_aligning_x_to(area) : identity_quat();
                fresh.scale = Vec3::Constant(std::max(edge / 3.0, min_scale));
                fresh.opacity = 0.5;
                ++rep.creations;
            }
            Gaussian back = backward_deform(backward, fresh, t);
            back.id = out.canonical.fresh_id();
            rep.created_ids.push_back(back.id);
            appended.push_back(back);
        }

        out.canonical.remove_ids(removed);
        for (const auto & g : appended)
            out.canonical.insert_with_id(g);

        const auto after = deform_all(forward, out.canonical.gaussians(), t);
        std::vector<Vec3> after_pos(after.size());
        for (std::size_t i = 0; i < after.size(); ++i)
            after_pos[i] = after[i].position;
        rep.coverage_after = face_coverage(after_pos, centroids, rep.radius);
        if (after_pos.size() >= 2)
            rep.uniformity_after = uniformity_metric(after_pos);
        std::sort(rep.removed.begin(), rep.removed.end(), [](const Gaussian & a, const Gaussian & b) { return a.id < b.id; });
        for (const auto & g : rep.removed)
            rep.removed_ids.push_back(g.id);
        return out;
    }
}
