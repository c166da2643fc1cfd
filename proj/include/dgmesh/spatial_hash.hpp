#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "core.hpp"

namespace dgm
{
    /**
     * Uniform-grid point index. Queries are exact: they return the same
     * indices, and the same bit-for-bit squared distances, as a linear scan
     * (ties resolved toward the lower index).
     */
    class UniformGridIndex
    {
    public:
        UniformGridIndex() = default;

        explicit UniformGridIndex(const std::vector<Vec3> & points, double cell_size = 0.0) : points_(&points)
        {
            if (points.empty())
                return;
            lo_ = points[0];
            Vec3 hi = points[0];
            for (const auto & p : points)
            {
                lo_ = lo_.cwiseMin(p);
                hi = hi.cwiseMax(p);
            }
            const Vec3 extent = hi - lo_;
            if (!(cell_size > 0.0))
            {
                const double n = static_cast<double>(points.size());
                const double longest = std::max(extent.maxCoeff(), 1e-12);
                // about two points per occupied cell for surface-like sets
                cell_size = std::max(longest / std::sqrt(n / 2.0), longest / 128.0);
            }
            // at most 128 cells per axis, every point inside its own cell
            cell_ = std::max(cell_size, extent.maxCoeff() / 127.0 * (1.0 + 1e-9));
            for (int a = 0; a < 3; ++a)
                dims_[a] = std::clamp(static_cast<int>(std::floor(extent[a] / cell_)) + 1, 1, 128);
            const std::size_t cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
            offsets_.assign(cells + 1, 0);
            std::vector<std::size_t> cell_of(points.size());
            for (std::size_t i = 0; i < points.size(); ++i)
            {
                cell_of[i] = linear(cell_coords(points[i]));
                ++offsets_[cell_of[i] + 1];
            }
            for (std::size_t c = 0; c < cells; ++c)
                offsets_[c + 1] += offsets_[c];
            order_.resize(points.size());
            std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
            for (std::size_t i = 0; i < points.size(); ++i)
                order_[fill[cell_of[i]]++] = static_cast<int>(i);
        }

        struct Hit
        {
            int index = -1;
            double distance2 = std::numeric_limits<double>::infinity();
        };

        /// Closest point to q, skipping index `exclude` when given.
        Hit nearest(const Vec3 & q, int exclude = -1) const
        {
            Hit best;
            if (!points_ || points_->empty())
                return best;
            const auto c = cell_coords(q);
            const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
            for (int r = 0; r <= max_ring; ++r)
            {
                visit_ring(c, r, [&](int idx) {
                    if (idx == exclude)
                        return;
                    const double d2 = ((*points_)[idx] - q).squaredNorm();
                    if (d2 < best.distance2 || (d2 == best.distance2 && idx < best.index))
                        best = {idx, d2};
                });
                const double bound = static_cast<double>(r) * cell_;
                if (best.index >= 0 && best.distance2 < bound * bound)
                    break;
            }
            return best;
        }

        /// Indices within `radius` (inclusive), ascending.
        std::vector<int> within_radius(const Vec3 & q, double radius) const
        {
            std::vector<int> out;
            if (!points_ || points_->empty() || radius < 0.0)
                return out;
            const double r2 = radius * radius;
            std::array<int, 3> lo {}, hi {};
            for (int a = 0; a < 3; ++a)
            {
                lo[a] = std::clamp(static_cast<int>(std::floor((q[a] - radius - lo_[a]) / cell_)), 0, dims_[a] - 1);
                hi[a] = std::clamp(static_cast<int>(std::floor((q[a] + radius - lo_[a]) / cell_)), 0, dims_[a] - 1);
            }
            for (int z = lo[2]; z <= hi[2]; ++z)
                for (int y = lo[1]; y <= hi[1]; ++y)
                    for (int x = lo[0]; x <= hi[0]; ++x)
                    {
                        const std::size_t c = linear({x, y, z});
                        for (std::size_t k = offsets_[c]; k < offsets_[c + 1]; ++k)
                        {
                            const int idx = order_[k];
                            if (((*points_)[idx] - q).squaredNorm() <= r2)
                                out.push_back(idx);
                        }
                    }
            std::sort(out.begin(), out.end());
            return out;
        }

    private:
        std::array<int, 3> cell_coords(const Vec3 & p) const
        {
            std::array<int, 3> c {};
            for (int a = 0; a < 3; ++a)
                c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
            return c;
        }

        std::size_t linear(const std::array<int, 3> & c) const
        {
            return static_cast<std::size_t>(c[0]) + static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(c[1]) + static_cast<std::size_t>(dims_[1]) * c[2]);
        }

        template <typename Fn>
        void visit_ring(const std::array<int, 3> & c, int r, Fn && fn) const
        {
            for (int z = c[2] - r; z <= c[2] + r; ++z)
            {
                if (z < 0 || z >= dims_[2])
                    continue;
                for (int y = c[1] - r; y <= c[1] + r; ++y)
                {
                    if (y < 0 || y >= dims_[1])
                        continue;
                    for (int x = c[0] - r; x <= c[0] + r; ++x)
                    {
                        if (x < 0 || x >= dims_[0])
                            continue;
                        if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != r)
                            continue;
                        const std::size_t cell = linear({x, y, z});
                        for (std::size_t k = offsets_[cell]; k < offsets_[cell + 1]; ++k)
                            fn(order_[k]);
                    }
                }
            }
        }

        const std::vector<Vec3> * points_ = nullptr;
        Vec3 lo_ = Vec3::Zero();
        double cell_ = 1.0;
        std::array<int, 3> dims_ {1, 1, 1};
        std::vector<std::size_t> offsets_;
        std::vector<int> order_;
    };

    inline UniformGridIndex::Hit brute_force_nearest(const std::vector<Vec3> & points, const Vec3 & q, int exclude = -1)
    {
        UniformGridIndex::Hit best;
        for (std::size_t i = 0; i < points.size(); ++i)
        {
            if (static_cast<int>(i) == exclude)
                continue;
            const double d2 = (points[i] - q).squaredNorm();
            if (d2 < best.distance2)
                best = {static_cast<int>(i), d2};
        }
        return best;
    }
}
