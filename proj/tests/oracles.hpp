#pragma once

// reference implementations shared by the metric tests and the acceptance run

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "dgmesh/core.hpp"

namespace dgm::oracle
{
    inline double brute_chamfer(const std::vector<Vec3> & a, const std::vector<Vec3> & b)
    {
        auto side = [](const std::vector<Vec3> & x, const std::vector<Vec3> & y) {
            double s = 0.0;
            for (const auto & p : x)
            {
                double best = std::numeric_limits<double>::infinity();
                for (const auto & q : y)
                    best = std::min(best, (p - q).squaredNorm());
                s += best;
            }
            return s / static_cast<double>(x.size());
        };
        return 0.5 * (side(a, b) + side(b, a));
    }

    inline double enumerate_emd(const std::vector<Vec3> & a, const std::vector<Vec3> & b)
    {
        std::vector<int> p(a.size());
        std::iota(p.begin(), p.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        do
        {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i)
                s += (a[i] - b[p[i]]).norm();
            best = std::min(best, s);
        } while (std::next_permutation(p.begin(), p.end()));
        return best / static_cast<double>(a.size());
    }

    // successive shortest paths with Bellman-Ford on the residual graph
    inline double ssp_emd(const std::vector<Vec3> & a, const std::vector<Vec3> & b)
    {
        const int n = static_cast<int>(a.size());
        std::vector<int> row_of(n, -1), col_of(n, -1);
        auto cost = [&](int i, int j) { return (a[i] - b[j]).norm(); };
        for (int round = 0; round < n; ++round)
        {
            // nodes: rows 0..n-1, cols n..2n-1
            std::vector<double> dist(2 * n, std::numeric_limits<double>::infinity());
            std::vector<int> prev(2 * n, -1);
            for (int i = 0; i < n; ++i)
                if (col_of[i] < 0)
                    dist[i] = 0.0;
            for (int it = 0; it < 2 * n; ++it)
            {
                bool changed = false;
                for (int i = 0; i < n; ++i)
                {
                    if (!std::isfinite(dist[i]))
                        continue;
                    for (int j = 0; j < n; ++j)
                        if (col_of[i] != j && dist[i] + cost(i, j) < dist[n + j] - 1e-15)
                        {
                            dist[n + j] = dist[i] + cost(i, j);
                            prev[n + j] = i;
                            changed = true;
                        }
                }
                for (int j = 0; j < n; ++j)
                {
                    const int i = row_of[j];
                    if (i >= 0 && std::isfinite(dist[n + j]) && dist[n + j] - cost(i, j) < dist[i] - 1e-15)
                    {
                        dist[i] = dist[n + j] - cost(i, j);
                        prev[i] = n + j;
                        changed = true;
                    }
                }
                if (!changed)
                    break;
            }
            int end = -1;
            for (int j = 0; j < n; ++j)
                if (row_of[j] < 0 && (end < 0 || dist[n + j] < dist[n + end]))
                    end = j;
            int node = n + end;
            while (node >= 0)
            {
                const int i = prev[node];
                if (node >= n)
                {
                    row_of[node - n] = i;
                    col_of[i] = node - n;
                }
                node = (node < n) ? prev[node] : i;
                if (node >= 0 && node < n && prev[node] < 0)
                    break;
            }
        }
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            s += cost(i, col_of[i]);
        return s / n;
    }
}
