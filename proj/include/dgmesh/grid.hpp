#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "core.hpp"

namespace dgm
{
    /**
     * Regular cubic grid of `resolution`³ nodes. Node (i, j, k) sits at
     * origin + spacing * (i, j, k); linear index is i + n * (j + n * k).
     */
    struct GridSpec
    {
        int resolution = 32;
        Vec3 origin = Vec3::Constant(-1.5);
        double spacing = 3.0 / 31.0;

        /// Grid whose first and last nodes sit on `lo` and `hi`.
        static GridSpec cube(double lo, double hi, int resolution)
        {
            GridSpec spec;
            spec.resolution = resolution;
            spec.origin = Vec3::Constant(lo);
            spec.spacing = (hi - lo) / static_cast<double>(resolution - 1);
            return spec;
        }

        std::size_t node_count() const
        {
            const auto n = static_cast<std::size_t>(resolution);
            return n * n * n;
        }

        std::size_t index(int i, int j, int k) const
        {
            const auto n = static_cast<std::size_t>(resolution);
            return static_cast<std::size_t>(i) + n * (static_cast<std::size_t>(j) + n * static_cast<std::size_t>(k));
        }

        Vec3 node_position(int i, int j, int k) const { return origin + spacing * Vec3(i, j, k); }

        Vec3 upper() const { return origin + spacing * Vec3::Constant(resolution - 1); }

        bool same_as(const GridSpec & other) const
        {
            return resolution == other.resolution && origin == other.origin && spacing == other.spacing;
        }

        bool is_power_of_two() const { return resolution >= 2 && (resolution & (resolution - 1)) == 0; }

        void validate() const
        {
            if (resolution < 8)
                throw Error(ErrorKind::UnsupportedResolution, "grid resolution must be at least 8");
            if (!(spacing > 0.0) || !std::isfinite(spacing))
                throw Error(ErrorKind::InvalidArgument, "grid spacing must be positive");
        }

        /// True when p lies inside the box with at least `margin` cells to spare.
        bool contains(const Vec3 & p, double margin_cells = 0.0) const
        {
            const Vec3 u = (p - origin) / spacing;
            const double hi = static_cast<double>(resolution - 1) - margin_cells;
            for (int a = 0; a < 3; ++a)
                if (!(u[a] >= margin_cells && u[a] <= hi))
                    return false;
            return true;
        }
    };

    struct ScalarGrid
    {
        GridSpec spec;
        std::vector<double> values;

        ScalarGrid() = default;
        explicit ScalarGrid(const GridSpec & s, double fill = 0.0) : spec(s), values(s.node_count(), fill) {}

        double & at(int i, int j, int k) { return values[spec.index(i, j, k)]; }
        double at(int i, int j, int k) const { return values[spec.index(i, j, k)]; }
    };

    struct VectorGrid
    {
        GridSpec spec;
        std::array<std::vector<double>, 3> values;

        VectorGrid() = default;
        explicit VectorGrid(const GridSpec & s) : spec(s)
        {
            for (auto & c : values)
                c.assign(s.node_count(), 0.0);
        }
    };

    /**
     * Trilinear stencil of a point: the lower corner of its cell and the
     * fractional offsets. Points on an interior cell face belong to the cell
     * with the larger index along that axis (floor convention), the last
     * layer of nodes to the final cell.
     */
    struct TrilinearStencil
    {
        std::array<int, 3> base {};
        Vec3 frac = Vec3::Zero();

        std::array<double, 8> weights() const
        {
            std::array<double, 8> w {};
            for (int c = 0; c < 8; ++c)
            {
                const double wx = (c & 1) ? frac.x() : 1.0 - frac.x();
                const double wy = (c & 2) ? frac.y() : 1.0 - frac.y();
                const double wz = (c & 4) ? frac.z() : 1.0 - frac.z();
                w[c] = wx * wy * wz;
            }
            return w;
        }

        /// d weight_c / d position, already divided by the spacing.
        std::array<Vec3, 8> weight_gradients(double spacing) const
        {
            std::array<Vec3, 8> g {};
            for (int c = 0; c < 8; ++c)
            {
                const double wx = (c & 1) ? frac.x() : 1.0 - frac.x();
                const double wy = (c & 2) ? frac.y() : 1.0 - frac.y();
                const double wz = (c & 4) ? frac.z() : 1.0 - frac.z();
                const double dx = (c & 1) ? 1.0 : -1.0;
                const double dy = (c & 2) ? 1.0 : -1.0;
                const double dz = (c & 4) ? 1.0 : -1.0;
                g[c] = Vec3(dx * wy * wz, wx * dy * wz, wx * wy * dz) / spacing;
            }
            return g;
        }

        std::size_t corner_index(const GridSpec & spec, int c) const
        {
            return spec.index(base[0] + (c & 1), base[1] + ((c >> 1) & 1), base[2] + ((c >> 2) & 1));
        }
    };

    /// Throws OutOfDomain (with `point_index`) when p is outside the grid box.
    inline TrilinearStencil locate(const GridSpec & spec, const Vec3 & p, std::size_t point_index = 0)
    {
        TrilinearStencil st;
        const Vec3 u = (p - spec.origin) / spec.spacing;
        const double last = static_cast<double>(spec.resolution - 1);
        for (int a = 0; a < 3; ++a)
        {
            if (!(u[a] >= 0.0 && u[a] <= last))
                throw Error(ErrorKind::OutOfDomain, "point lies outside the grid domain", point_index);
            int cell = static_cast<int>(std::floor(u[a]));
            cell = std::min(cell, spec.resolution - 2);
            st.base[a] = cell;
            st.frac[a] = u[a] - cell;
        }
        return st;
    }

    inline double interpolate(const ScalarGrid & grid, const Vec3 & p)
    {
        const auto st = locate(grid.spec, p);
        const auto w = st.weights();
        double v = 0.0;
        for (int c = 0; c < 8; ++c)
            v += w[c] * grid.values[st.corner_index(grid.spec, c)];
        return v;
    }

    inline Vec3 interpolate_gradient(const ScalarGrid & grid, const Vec3 & p)
    {
        const auto st = locate(grid.spec, p);
        const auto g = st.weight_gradients(grid.spec.spacing);
        Vec3 v = Vec3::Zero();
        for (int c = 0; c < 8; ++c)
            v += g[c] * grid.values[st.corner_index(grid.spec, c)];
        return v;
    }
}
