#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace dgm
{
    using Vec3 = Eigen::Vector3d;
    using Mat3 = Eigen::Matrix3d;
    /// Quaternion stored as (w, x, y, z). This order is used everywhere,
    /// including every file format the library reads or writes.
    using Quat = Eigen::Vector4d;

    inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

    inline Quat normalize_quat(const Quat & q)
    {
        const double n = q.norm();
        if (!(n > 1e-12) || !std::isfinite(n))
            throw Error(ErrorKind::InvalidRotation, "quaternion has zero or non-finite norm");
        return q / n;
    }

    /// Hamilton product a ⊗ b.
    inline Quat quat_multiply(const Quat & a, const Quat & b)
    {
        return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                    a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                    a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                    a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
    }

    inline Quat quat_conjugate(const Quat & q) { return Quat(q[0], -q[1], -q[2], -q[3]); }

    /// Rotation matrix of q; q is renormalized first.
    inline Mat3 quat_to_rotation(const Quat & q_in)
    {
        const Quat q = normalize_quat(q_in);
        const double w = q[0], x = q[1], y = q[2], z = q[3];
        Mat3 r;
        r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return r;
    }

    inline Quat rotation_to_quat(const Mat3 & r)
    {
        const Eigen::Quaterniond q(r);
        Quat out(q.w(), q.x(), q.y(), q.z());
        if (out[0] < 0)
            out = -out;
        return normalize_quat(out);
    }

    /// Quaternion whose rotation maps the x axis onto `dir` (unit).
    inline Quat quat_aligning_x_to(const Vec3 & dir)
    {
        const Vec3 a = dir.normalized();
        const Vec3 helper = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        const Vec3 b = (helper - a * a.dot(helper)).normalized();
        const Vec3 c = a.cross(b);
        Mat3 r;
        r.col(0) = a;
        r.col(1) = b;
        r.col(2) = c;
        return rotation_to_quat(r);
    }

    /**
     * Vector-Jacobian product of column `col` of quat_to_rotation(q) with
     * respect to the raw (unnormalized) q.
     */
    inline Quat rotation_column_vjp(const Quat & q_raw, int col, const Vec3 & upstream)
    {
        const double n = q_raw.norm();
        const Quat q = q_raw / n;
        const double w = q[0], x = q[1], y = q[2], z = q[3];
        // d col / d(w, x, y, z) at the unit quaternion, one 3-vector per component
        std::array<Vec3, 4> d;
        switch (col)
        {
            case 0:
                d = {Vec3(0, 2 * z, -2 * y), Vec3(0, 2 * y, 2 * z),
                     Vec3(-4 * y, 2 * x, -2 * w), Vec3(-4 * z, 2 * w, 2 * x)};
                break;
            case 1:
                d = {Vec3(-2 * z, 0, 2 * x), Vec3(2 * y, -4 * x, 2 * w),
                     Vec3(2 * x, 0, 2 * z), Vec3(-2 * w, -4 * z, 2 * y)};
                break;
            default:
                d = {Vec3(2 * y, -2 * x, 0), Vec3(2 * z, -2 * w, -4 * x),
                     Vec3(2 * w, 2 * z, -4 * y), Vec3(2 * x, 2 * y, 0)};
                break;
        }
        Quat g_unit;
        for (int k = 0; k < 4; ++k)
            g_unit[k] = d[k].dot(upstream);
        // through q / |q|
        return (g_unit - q * q.dot(g_unit)) / n;
    }

    /// VJP of quat_to_rotation(q) * v with respect to q (raw).
    inline Quat rotate_vector_vjp(const Quat & q_raw, const Vec3 & v, const Vec3 & upstream)
    {
        Quat g = Quat::Zero();
        for (int c = 0; c < 3; ++c)
            g += v[c] * rotation_column_vjp(q_raw, c, upstream);
        return g;
    }

    /// Σ = R S Sᵀ Rᵀ.
    inline Mat3 build_covariance(const Quat & r, const Vec3 & s)
    {
        if (!(s.array() > 0.0).all())
            throw Error(ErrorKind::InvalidScale, "scale components must be positive");
        const Mat3 rot = quat_to_rotation(r);
        const Mat3 rs = rot * s.asDiagonal();
        Mat3 cov = rs * rs.transpose();
        // exact symmetry
        cov = 0.5 * (cov + cov.transpose()).eval();
        return cov;
    }

    struct Gaussian
    {
        std::uint64_t id = 0;
        Vec3 position = Vec3::Zero();
        Quat rotation = identity_quat();
        Vec3 scale = Vec3::Ones();
        double opacity = 1.0;
    };

    /// Axis index of the smallest scale; ties go to the lowest axis.
    inline int shortest_axis(const Vec3 & s)
    {
        int axis = 0;
        for (int k = 1; k < 3; ++k)
            if (s[k] < s[axis])
                axis = k;
        return axis;
    }

    /// Rotation column along the flattest axis of the Gaussian.
    inline Vec3 gaussian_normal(const Gaussian & g)
    {
        return quat_to_rotation(g.rotation).col(shortest_axis(g.scale));
    }

    /**
     * Persistent Gaussian set with stable identities. Insertion order is kept,
     * removal preserves the relative order of survivors.
     */
    class CanonicalSet
    {
    public:
        CanonicalSet() = default;

        const std::vector<Gaussian> & gaussians() const { return gaussians_; }
        std::vector<Gaussian> & mutable_gaussians() { return gaussians_; }
        std::size_t size() const { return gaussians_.size(); }
        bool empty() const { return gaussians_.empty(); }
        std::uint64_t next_id() const { return next_id_; }

        std::uint64_t fresh_id() { return next_id_++; }

        /// Appends g under a fresh identity and returns it.
        std::uint64_t add(Gaussian g)
        {
            g.id = fresh_id();
            gaussians_.push_back(g);
            return g.id;
        }

        /// Appends g keeping its id; the id must not be in use.
        void insert_with_id(const Gaussian & g)
        {
            for (const auto & other : gaussians_)
                if (other.id == g.id)
                    throw Error(ErrorKind::InvalidArgument, "duplicate gaussian id");
            gaussians_.push_back(g);
            next_id_ = std::max(next_id_, g.id + 1);
        }

        void remove_ids(const std::unordered_set<std::uint64_t> & ids)
        {
            std::erase_if(gaussians_, [&](const Gaussian & g) { return ids.count(g.id) > 0; });
        }

    private:
        std::vector<Gaussian> gaussians_;
        std::uint64_t next_id_ = 0;
    };

    struct OrientedPointCloud
    {
        std::vector<Vec3> positions;
        std::vector<Vec3> normals;

        std::size_t size() const { return positions.size(); }
        bool empty() const { return positions.empty(); }

        void validate() const
        {
            if (positions.size() != normals.size())
                throw Error(ErrorKind::SizeMismatch, "positions and normals differ in count");
            for (std::size_t i = 0; i < normals.size(); ++i)
                if (std::abs(normals[i].norm() - 1.0) > 1e-6)
                    throw Error(ErrorKind::InvalidArgument, "normal is not unit length", i);
        }
    };

    inline Vec3 centroid(const std::vector<Vec3> & points)
    {
        Vec3 c = Vec3::Zero();
        for (const auto & p : points)
            c += p;
        return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
    }

    enum class OrientMode
    {
        outward,
        inward,
    };

    /// Flips each normal so that it faces away from (or toward) the centroid.
    inline OrientedPointCloud orient_normals(const OrientedPointCloud & cloud, OrientMode mode = OrientMode::outward)
    {
        if (cloud.empty())
            throw Error(ErrorKind::EmptyInput, "cannot orient an empty cloud");
        const Vec3 c = centroid(cloud.positions);
        const double sign = mode == OrientMode::outward ? 1.0 : -1.0;
        OrientedPointCloud out = cloud;
        for (std::size_t i = 0; i < out.size(); ++i)
            if (sign * out.normals[i].dot(out.positions[i] - c) < 0.0)
                out.normals[i] = -out.normals[i];
        return out;
    }

    /// Positions and flattest-axis normals of a Gaussian collection.
    inline OrientedPointCloud gaussians_to_cloud(const std::vector<Gaussian> & gaussians)
    {
        OrientedPointCloud cloud;
        cloud.positions.reserve(gaussians.size());
        cloud.normals.reserve(gaussians.size());
        for (const auto & g : gaussians)
        {
            cloud.positions.push_back(g.position);
            cloud.normals.push_back(gaussian_normal(g));
        }
        return cloud;
    }
}
