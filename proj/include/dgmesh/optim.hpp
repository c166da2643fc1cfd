#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "anchoring.hpp"
#include "core.hpp"
#include "deform.hpp"
#include "marching_cubes.hpp"
#include "mesh.hpp"
#include "psr.hpp"
#include "util.hpp"

namespace dgm
{
    struct LossWeights
    {
        // the indicator carries 1/area units, so its squared mismatch is
        // tiny next to the squared-length terms
        double w_fit = 1e4;
        double w_lap = 0.0;
        double w_anchor = 1.0;
        double w_cycle = 1.0;

        void validate() const
        {
            for (double w : {w_fit, w_lap, w_anchor, w_cycle})
                if (!(w >= 0.0) || !std::isfinite(w))
                    throw Error(ErrorKind::InvalidArgument, "loss weights must be non-negative and finite");
        }
    };

    /**
     * Laplacian weight for a ratio on the 0..2000 scale: at 1000 the weighted
     * Laplacian term equals the fit term at the starting state. `fit0` is
     * the weighted fit term.
     */
    inline double laplacian_weight_for_ratio(double ratio, double fit0, double lap0)
    {
        if (!(ratio > 0.0) || !(lap0 > 0.0))
            return 0.0;
        return ratio / 1000.0 * fit0 / lap0;
    }

    /// Everything the objective needs besides the weights.
    struct ObjectiveConfig
    {
        double sigma = 2.0;
        bool normalize_by_count = true;
        double iso = 0.0;
        AnchorConfig anchor;
    };

    struct OptimState
    {
        CanonicalSet canonical;
        DeformationModel forward;
        DeformationModel backward;
    };

    struct LossComponents
    {
        double fit = 0.0;
        double lap = 0.0;
        double anchor = 0.0;
        double cycle = 0.0;
        double total = 0.0;
        int anchor_pairs = 0;
        bool anchor_defined = false;
        std::size_t mesh_vertices = 0;
        std::size_t mesh_faces = 0;
    };

    /// Gradient with respect to every optimized quantity.
    struct StateGradient
    {
        std::vector<Vec3> positions;  // canonical positions
        std::vector<Quat> rotations;  // canonical raw quaternions
        std::vector<double> forward;
        std::vector<double> backward;

        double squared_norm() const
        {
            double s = 0.0;
            for (const auto & v : positions)
                s += v.squaredNorm();
            for (const auto & v : rotations)
                s += v.squaredNorm();
            for (double v : forward)
                s += v * v;
            for (double v : backward)
                s += v * v;
            return s;
        }
    };

    /// Everything the objective is piecewise smooth in: mesh topology, face assignment, cycle residual signs.
    struct SmoothPiece
    {
        std::vector<std::size_t> splat_cells;
        std::vector<Face> faces;
        std::vector<int> gaussian_face;
        std::vector<signed char> cycle_signs;

        bool operator==(const SmoothPiece &) const = default;
    };

    struct Evaluation
    {
        LossComponents components;
        std::optional<StateGradient> gradient;
        ScalarGrid chi;
        TriMesh mesh;
        std::optional<SmoothPiece> piece;
    };

    inline psr::PsrConfig psr_config_for(const GridSpec & grid, const ObjectiveConfig & cfg)
    {
        psr::PsrConfig p;
        p.grid = grid;
        p.sigma = cfg.sigma;
        p.normalize_by_count = cfg.normalize_by_count;
        return p;
    }

    /**
     * w_fit·mean((χ − target)²) + w_lap·L_lap + w_anchor·L_anchor + w_cycle·L_cycle,
     * χ being the indicator of the forward-deformed Gaussians at time t.
     * The marching-cubes topology and the face assignment are held fixed
     * when differentiating.
     */
    inline Evaluation evaluate_objective(const OptimState & state, const ScalarGrid & target, const LossWeights & weights, double t,
                                         const ObjectiveConfig & cfg, bool with_gradient, bool with_piece = false)
    {
        weights.validate();
        if (state.canonical.empty())
            throw Error(ErrorKind::EmptyInput, "the canonical set is empty");
        if (target.values.size() != target.spec.node_count())
            throw Error(ErrorKind::GridMismatch, "target grid has the wrong number of values");
        const auto psr_cfg = psr_config_for(target.spec, cfg);

        const auto & canonical = state.canonical.gaussians();
        const auto deformed = deform_all(state.forward, canonical, t);
        const auto cloud = gaussians_to_cloud(deformed);
        auto forward_pass = psr::psr_forward(cloud, psr_cfg);

        Evaluation ev;
        auto & c = ev.components;
        const std::size_t nodes = target.values.size();
        std::vector<double> diff(nodes);
        CompensatedSum fit_sum;
        for (std::size_t k = 0; k < nodes; ++k)
        {
            diff[k] = forward_pass.chi.values[k] - target.values[k];
            fit_sum.add(diff[k] * diff[k]);
        }
        c.fit = fit_sum.value() / static_cast<double>(nodes);

        ev.mesh = marching_cubes(forward_pass.chi, cfg.iso);
        c.mesh_vertices = ev.mesh.vertices.size();
        c.mesh_faces = ev.mesh.faces.size();
        LaplacianResult lap;
        std::optional<FaceAssignment> assignment;
        std::vector<Vec3> positions(deformed.size());
        for (std::size_t i = 0; i < deformed.size(); ++i)
            positions[i] = deformed[i].position;
        AnchorLossGradient anchor;
        if (!ev.mesh.empty())
        {
            lap = laplacian_energy(ev.mesh);
            c.lap = lap.energy;
            const auto centroids = face_centroids(ev.mesh);
            assignment = match_gaussians_to_faces(positions, centroids, cfg.anchor.mode, cfg.anchor.radius_for(ev.mesh));
            anchor = anchor_loss_gradient(*assignment, positions, ev.mesh);
            c.anchor = anchor.loss.value;
            c.anchor_pairs = anchor.loss.pairs;
            c.anchor_defined = anchor.loss.defined;
        }

        CycleGradient cycle;
        if (with_gradient && weights.w_cycle > 0.0)
        {
            cycle = cycle_loss_gradient(state.forward, state.backward, canonical, t);
            c.cycle = cycle.loss;
        }
        else
        {
            c.cycle = cycle_loss(state.forward, state.backward, canonical, deformed, t);
        }
        c.total = weights.w_fit * c.fit + weights.w_lap * c.lap + weights.w_anchor * c.anchor + weights.w_cycle * c.cycle;

        if (with_piece)
        {
            SmoothPiece piece;
            // terms with zero weight cannot bend the total
            if (weights.w_fit > 0.0 || weights.w_lap > 0.0 || weights.w_anchor > 0.0)
                for (std::size_t i = 0; i < cloud.size(); ++i)
                    piece.splat_cells.push_back(locate(target.spec, cloud.positions[i], i).corner_index(target.spec, 0));
            if (weights.w_lap > 0.0 || weights.w_anchor > 0.0)
                piece.faces = ev.mesh.faces;
            if (weights.w_anchor > 0.0 && assignment)
                piece.gaussian_face = assignment->gaussian_face;
            if (weights.w_cycle > 0.0)
                piece.cycle_signs = cycle_residual_signs(state.forward, state.backward, canonical, deformed, t);
            ev.piece = std::move(piece);
        }

        if (with_gradient)
        {
            ScalarGrid dchi(target.spec);
            const double fit_scale = weights.w_fit * 2.0 / static_cast<double>(nodes);
            for (std::size_t k = 0; k < nodes; ++k)
                dchi.values[k] = fit_scale * diff[k];
            if (!ev.mesh.empty() && (weights.w_lap > 0.0 || weights.w_anchor > 0.0))
            {
                std::vector<Vec3> dv(ev.mesh.vertices.size(), Vec3::Zero());
                for (std::size_t v = 0; v < dv.size(); ++v)
                    dv[v] = weights.w_lap * lap.gradient[v] + weights.w_anchor * anchor.vertices[v];
                const auto from_mesh = mc_backprop(ev.mesh, dv);
                for (std::size_t k = 0; k < nodes; ++k)
                    dchi.values[k] += from_mesh.values[k];
            }
            const auto pg = psr::psr_gradient(forward_pass.adjoint, dchi);

            std::vector<GaussianGrad> upstream(deformed.size());
            for (std::size_t i = 0; i < deformed.size(); ++i)
            {
                upstream[i].position = pg.positions[i];
                if (!ev.mesh.empty())
                    upstream[i].position += weights.w_anchor * anchor.positions[i];
                upstream[i].rotation = rotation_column_vjp(deformed[i].rotation, shortest_axis(deformed[i].scale), pg.normals[i]);
            }
            const auto dg = deform_gradient(state.forward, canonical, t, upstream);

            StateGradient g;
            g.positions.resize(canonical.size());
            g.rotations.resize(canonical.size());
            for (std::size_t i = 0; i < canonical.size(); ++i)
            {
                g.positions[i] = dg.gaussians[i].position;
                g.rotations[i] = dg.gaussians[i].rotation;
            }
            g.forward = dg.coefficients;
            g.backward.assign(state.backward.coefficients.size(), 0.0);
            if (weights.w_cycle > 0.0)
            {
                for (std::size_t i = 0; i < canonical.size(); ++i)
                {
                    g.positions[i] += weights.w_cycle * cycle.gaussians[i].position;
                    g.rotations[i] += weights.w_cycle * cycle.gaussians[i].rotation;
                }
                for (std::size_t k = 0; k < g.forward.size(); ++k)
                    g.forward[k] += weights.w_cycle * cycle.forward[k];
                for (std::size_t k = 0; k < g.backward.size(); ++k)
                    g.backward[k] = weights.w_cycle * cycle.backward[k];
            }
            ev.gradient = std::move(g);
        }
        ev.chi = std::move(forward_pass.chi);
        return ev;
    }

    inline LossComponents total_loss(const OptimState & state, const ScalarGrid & target, const LossWeights & weights, double t,
                                     const ObjectiveConfig & cfg = {})
    {
        return evaluate_objective(state, target, weights, t, cfg, false).components;
    }

    inline StateGradient loss_gradient(const OptimState & state, const ScalarGrid & target, const LossWeights & weights, double t,
                                       const ObjectiveConfig & cfg = {})
    {
        return *evaluate_objective(state, target, weights, t, cfg, true).gradient;
    }

    namespace detail
    {
        /// Flat view of the optimized coordinates: positions, rotations, forward, backward.
        inline std::size_t coordinate_count(const OptimState & s)
        {
            return s.canonical.size() * 7 + s.forward.coefficients.size() + s.backward.coefficients.size();
        }

        inline double & coordinate(OptimState & s, std::size_t k)
        {
            auto & gs = s.canonical.mutable_gaussians();
            const std::size_t n = gs.size();
            if (k < 3 * n)
                return gs[k / 3].position[static_cast<int>(k % 3)];
            k -= 3 * n;
            if (k < 4 * n)
                return gs[k / 4].rotation[static_cast<int>(k % 4)];
            k -= 4 * n;
            if (k < s.forward.coefficients.size())
                return s.forward.coefficients[k];
            k -= s.forward.coefficients.size();
            return s.backward.coefficients[k];
        }

        inline double gradient_coordinate(const StateGradient & g, std::size_t k)
        {
            const std::size_t n = g.positions.size();
            if (k < 3 * n)
                return g.positions[k / 3][static_cast<int>(k % 3)];
            k -= 3 * n;
            if (k < 4 * n)
                return g.rotations[k / 4][static_cast<int>(k % 4)];
            k -= 4 * n;
            if (k < g.forward.size())
                return g.forward[k];
            k -= g.forward.size();
            return g.backward[k];
        }
    }

    struct GradCheckProbe
    {
        std::size_t coordinate = 0;
        double analytic = 0.0;
        double numeric = 0.0;
        double relative_error = 0.0;
    };

    struct GradCheckResult
    {
        double max_relative_error = 0.0;
        std::vector<GradCheckProbe> probes;
        // coordinates redrawn because the ±eps stencil left the smooth piece of the base state
        int nonsmooth_skipped = 0;
    };

    /**
     * Central differences along random coordinates. The relative error is
     * |a − n| / max(|a|, |n|, floor), floor = 1e-6 · max|gradient| so that
     * coordinates with a vanishing derivative are compared on the scale of
     * the whole gradient.
     *
     * The objective is only piecewise smooth: splat cells, marching-cubes
     * topology, the face assignment and the signs of the L1 cycle residuals
     * select the piece. A coordinate whose stencil crosses into another piece
     * measures a kink, not the derivative, so it is redrawn (at most
     * 10·n_probes draws in total).
     */
    inline GradCheckResult grad_check(const OptimState & state, const ScalarGrid & target, const LossWeights & weights, double t,
                                      const ObjectiveConfig & cfg, int n_probes, double eps, std::uint64_t seed)
    {
        if (n_probes < 1)
            throw Error(ErrorKind::InvalidArgument, "at least one probe is required");
        if (!(eps > 0.0))
            throw Error(ErrorKind::InvalidArgument, "finite-difference step must be positive");
        const auto base = evaluate_objective(state, target, weights, t, cfg, true, true);
        const auto & g = *base.gradient;
        const std::size_t dims = detail::coordinate_count(state);
        double g_max = 0.0;
        for (std::size_t k = 0; k < dims; ++k)
            g_max = std::max(g_max, std::abs(detail::gradient_coordinate(g, k)));
        const double floor = std::max(1e-6 * g_max, std::numeric_limits<double>::min());

        GradCheckResult out;
        Rng rng(seed);
        for (int draw = 0; draw < 10 * n_probes && static_cast<int>(out.probes.size()) < n_probes; ++draw)
        {
            const std::size_t k = rng.below(dims);
            OptimState plus = state, minus = state;
            detail::coordinate(plus, k) += eps;
            detail::coordinate(minus, k) -= eps;
            const auto ep = evaluate_objective(plus, target, weights, t, cfg, false, true);
            const auto em = evaluate_objective(minus, target, weights, t, cfg, false, true);
            if (*ep.piece != *base.piece || *em.piece != *base.piece)
            {
                ++out.nonsmooth_skipped;
                continue;
            }
            GradCheckProbe probe;
            probe.coordinate = k;
            probe.numeric = (ep.components.total - em.components.total) / (2.0 * eps);
            probe.analytic = detail::gradient_coordinate(g, k);
            const double denom = std::max({std::abs(probe.analytic), std::abs(probe.numeric), floor});
            probe.relative_error = std::abs(probe.analytic - probe.numeric) / denom;
            if (g_max == 0.0 && probe.numeric == 0.0)
                probe.relative_error = 0.0;
            out.max_relative_error = std::max(out.max_relative_error, probe.relative_error);
            out.probes.push_back(probe);
        }
        return out;
    }

    struct FitOptions
    {
        int steps = 200;
        double step_size = 1e-3;
        int anchor_interval = 100;
        // global index of the first iteration, so a schedule can span calls
        int first_iteration = 0;
        double momentum = 0.9;
        // per-group multipliers of step_size
        double rotation_scale = 1.0;
        double deform_scale = 1.0;
        bool optimize_positions = true;
        bool optimize_rotations = true;
        bool optimize_forward = true;
        bool optimize_backward = true;

        void validate() const
        {
            if (steps < 1)
                throw Error(ErrorKind::InvalidArgument, "at least one step is required");
            if (!(step_size > 0.0))
                throw Error(ErrorKind::InvalidArgument, "step size must be positive");
            if (anchor_interval < 1)
                throw Error(ErrorKind::InvalidArgument, "anchoring interval must be at least 1");
            if (first_iteration < 0)
                throw Error(ErrorKind::InvalidArgument, "first iteration must be non-negative");
            if (!(momentum >= 0.0 && momentum < 1.0))
                throw Error(ErrorKind::InvalidArgument, "momentum must be in [0, 1)");
        }
    };

    struct FitRow
    {
        int iteration = 0;
        LossComponents loss;
        double grad_norm = 0.0;
        double step_size = 0.0;
        double best_total = 0.0;  // best total since the last anchoring event
        bool anchored = false;    // anchoring ran after this iteration's step
    };

    using FitTrace = std::vector<FitRow>;

    struct FitResult
    {
        OptimState state;
        FitTrace trace;
        bool diverged = false;
        int anchoring_events = 0;
        std::vector<AnchorReport> anchor_reports;
    };

    namespace detail
    {
        struct Momentum
        {
            std::unordered_map<std::uint64_t, std::pair<Vec3, Quat>> gaussians;
            std::vector<double> forward;
            std::vector<double> backward;
        };
    }

    /**
     * Momentum gradient descent. Anchoring runs after the step of every
     * iteration i with (i + 1) % anchor_interval == 0; it is a projection,
     * not a differentiable step, so the best-so-far bookkeeping restarts
     * after it. The returned state is the best one seen since the last
     * anchoring event (or overall when none happened).
     */
    inline FitResult fit(const OptimState & initial, const ScalarGrid & target, const LossWeights & weights, double t,
                         const ObjectiveConfig & cfg, const FitOptions & opt)
    {
        opt.validate();
        FitResult out;
        OptimState state = initial;
        detail::Momentum mom;
        mom.forward.assign(state.forward.coefficients.size(), 0.0);
        mom.backward.assign(state.backward.coefficients.size(), 0.0);

        OptimState best = state;
        double best_total = std::numeric_limits<double>::infinity();

        for (int it = 0; it < opt.steps; ++it)
        {
            Evaluation ev;
            try
            {
                ev = evaluate_objective(state, target, weights, t, cfg, true);
            }
            catch (const Error & e)
            {
                // a Gaussian left the grid: the step was too large
                if (e.kind() != ErrorKind::OutOfDomain)
                    throw;
                out.diverged = true;
                break;
            }
            FitRow row;
            row.iteration = it;
            row.loss = ev.components;
            row.step_size = opt.step_size;
            const auto & g = *ev.gradient;
            row.grad_norm = std::sqrt(g.squared_norm());
            if (!std::isfinite(row.loss.total) || !std::isfinite(row.grad_norm))
            {
                out.diverged = true;
                row.best_total = best_total;
                out.trace.push_back(row);
                break;
            }
            if (row.loss.total < best_total)
            {
                best_total = row.loss.total;
                best = state;
            }
            row.best_total = best_total;

            auto & gs = state.canonical.mutable_gaussians();
            // each Gaussian carries 1/N of the indicator mass, so its own
            // gradient shrinks with N; scaling by N keeps per-Gaussian moves
            // independent of the set size
            const double local_step = opt.step_size * static_cast<double>(gs.size());
            for (std::size_t i = 0; i < gs.size(); ++i)
            {
                auto & m = mom.gaussians.try_emplace(gs[i].id, Vec3::Zero(), Quat::Zero()).first->second;
                m.first = opt.momentum * m.first + g.positions[i];
                m.second = opt.momentum * m.second + g.rotations[i];
                if (opt.optimize_positions)
                    gs[i].position -= local_step * m.first;
                // renormalizing an unchanged unit quaternion still moves its bits
                if (opt.optimize_rotations && m.second != Quat::Zero())
                {
                    const Quat q = gs[i].rotation - local_step * opt.rotation_scale * m.second;
                    if (q.norm() > 1e-12)
                        gs[i].rotation = q.normalized();
                }
            }
            for (std::size_t k = 0; k < g.forward.size(); ++k)
            {
                mom.forward[k] = opt.momentum * mom.forward[k] + g.forward[k];
                if (opt.optimize_forward)
                    state.forward.coefficients[k] -= opt.step_size * opt.deform_scale * mom.forward[k];
            }
            for (std::size_t k = 0; k < g.backward.size(); ++k)
            {
                mom.backward[k] = opt.momentum * mom.backward[k] + g.backward[k];
                if (opt.optimize_backward)
                    state.backward.coefficients[k] -= opt.step_size * opt.deform_scale * mom.backward[k];
            }

            if ((opt.first_iteration + it + 1) % opt.anchor_interval == 0)
            {
                const auto cloud = gaussians_to_cloud(deform_all(state.forward, state.canonical.gaussians(), t));
                const auto chi = psr::psr_forward(cloud, psr_config_for(target.spec, cfg)).chi;
                const auto mesh = marching_cubes(chi, cfg.iso);
                if (!mesh.empty())
                {
                    auto res = anchor_step(state.canonical, state.forward, state.backward, mesh, t, cfg.anchor);
                    state.canonical = std::move(res.canonical);
                    std::unordered_map<std::uint64_t, std::pair<Vec3, Quat>> kept;
                    for (const auto & gg : state.canonical.gaussians())
                    {
                        auto found = mom.gaussians.find(gg.id);
                        if (found != mom.gaussians.end())
                            kept.emplace(gg.id, found->second);
                    }
                    mom.gaussians = std::move(kept);
                    out.anchor_reports.push_back(std::move(res.report));
                    ++out.anchoring_events;
                    row.anchored = true;
                    best = state;
                    best_total = std::numeric_limits<double>::infinity();
                }
            }
            out.trace.push_back(row);
        }

        if (!out.diverged)
        {
            // the state after the last step has not been scored yet
            try
            {
                const auto last = total_loss(state, target, weights, t, cfg);
                if (std::isfinite(last.total) && last.total < best_total)
                {
                    best_total = last.total;
                    best = state;
                }
            }
            catch (const Error & e)
            {
                if (e.kind() != ErrorKind::OutOfDomain)
                    throw;
                out.diverged = true;
            }
        }
        out.state = std::move(best);
        return out;
    }
}
