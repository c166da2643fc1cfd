#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "util.hpp"

namespace dgm
{
    /// γᵏ(p) for one scalar: (sin 2⁰πp, cos 2⁰πp, ..., sin 2ᵏπp, cos 2ᵏπp).
    inline std::vector<double> positional_encoding(double p, int k)
    {
        if (k < 0)
            throw Error(ErrorKind::InvalidArgument, "frequency count must be non-negative");
        std::vector<double> out;
        out.reserve(2 * static_cast<std::size_t>(k + 1));
        double freq = M_PI;
        for (int l = 0; l <= k; ++l)
        {
            out.push_back(std::sin(freq * p));
            out.push_back(std::cos(freq * p));
            freq *= 2.0;
        }
        return out;
    }

    /// Per-scalar encodings concatenated in input order.
    inline std::vector<double> positional_encoding(const std::vector<double> & p, int k)
    {
        std::vector<double> out;
        out.reserve(p.size() * 2 * static_cast<std::size_t>(std::max(k, 0) + 1));
        for (double v : p)
        {
            const auto e = positional_encoding(v, k);
            out.insert(out.end(), e.begin(), e.end());
        }
        return out;
    }

    inline constexpr int time_frequencies = 6;
    /// Constant term plus γ⁶(t).
    inline constexpr int time_feature_count = 1 + 2 * (time_frequencies + 1);

    inline std::array<double, time_feature_count> time_features(double t)
    {
        std::array<double, time_feature_count> phi {};
        phi[0] = 1.0;
        const auto enc = positional_encoding(t, time_frequencies);
        std::copy(enc.begin(), enc.end(), phi.begin() + 1);
        return phi;
    }

    /// Matrix of a ⊗ (·).
    inline Eigen::Matrix4d quat_left_matrix(const Quat & a)
    {
        Eigen::Matrix4d m;
        m << a[0], -a[1], -a[2], -a[3],
             a[1], a[0], -a[3], a[2],
             a[2], a[3], a[0], -a[1],
             a[3], -a[2], a[1], a[0];
        return m;
    }

    /// Matrix of (·) ⊗ b.
    inline Eigen::Matrix4d quat_right_matrix(const Quat & b)
    {
        Eigen::Matrix4d m;
        m << b[0], -b[1], -b[2], -b[3],
             b[1], b[0], b[3], -b[2],
             b[2], -b[3], b[0], b[1],
             b[3], b[2], -b[1], b[0];
        return m;
    }

    /// Gradient through q / |q| given the gradient at the normalized value.
    inline Quat normalize_vjp(const Quat & q_raw, const Quat & upstream)
    {
        const double n = q_raw.norm();
        const Quat q = q_raw / n;
        return (upstream - q * q.dot(upstream)) / n;
    }

    enum class DeformKind
    {
        rigid,
        affine,
        sinusoidal_bend,
        control_lattice,
    };

    inline std::string_view to_string(DeformKind kind)
    {
        switch (kind)
        {
            case DeformKind::rigid: return "rigid";
            case DeformKind::affine: return "affine";
            case DeformKind::sinusoidal_bend: return "sinusoidal_bend";
            case DeformKind::control_lattice: return "control_lattice";
        }
        return "unknown";
    }

    inline DeformKind parse_deform_kind(std::string_view name)
    {
        for (auto k : {DeformKind::rigid, DeformKind::affine, DeformKind::sinusoidal_bend, DeformKind::control_lattice})
            if (to_string(k) == name)
                return k;
        throw Error(ErrorKind::ConfigError, "unknown deformation kind '" + std::string(name) + "'");
    }

    /**
     * Base parameter layouts θ (the time schedule multiplies these):
     *   rigid            q (4, added to the identity then normalized), u (3)
     *   affine           M (9, row-major, x ↦ x + M x + u), u (3)
     *   sinusoidal_bend  A (3), w (3), φ (1): δx = A sin(w·x + φ)
     *   control_lattice  27 control displacements (3 each) of a quadratic
     *                    Bernstein lattice over `lattice_lo`..`lattice_hi`
     */
    inline int base_parameter_count(DeformKind kind)
    {
        switch (kind)
        {
            case DeformKind::rigid: return 7;
            case DeformKind::affine: return 12;
            case DeformKind::sinusoidal_bend: return 7;
            case DeformKind::control_lattice: return 81;
        }
        return 0;
    }

    /**
     * Parametric deformation field. θ(t) = C φ(t) with C stored row-major as
     * P × time_feature_count, φ(t) = (1, γ⁶(t)). All-zero coefficients give
     * the identity map for every kind.
     */
    struct DeformationModel
    {
        DeformKind kind = DeformKind::rigid;
        std::vector<double> coefficients;
        Vec3 lattice_lo = Vec3::Constant(-1.5);
        Vec3 lattice_hi = Vec3::Constant(1.5);

        DeformationModel() : coefficients(static_cast<std::size_t>(base_parameter_count(kind)) * time_feature_count, 0.0) {}

        explicit DeformationModel(DeformKind k)
            : kind(k), coefficients(static_cast<std::size_t>(base_parameter_count(k)) * time_feature_count, 0.0)
        {
        }

        int parameter_count() const { return base_parameter_count(kind); }

        double & coefficient(int param, int feature) { return coefficients[static_cast<std::size_t>(param) * time_feature_count + feature]; }
        double coefficient(int param, int feature) const { return coefficients[static_cast<std::size_t>(param) * time_feature_count + feature]; }

        /// Sets θ to a constant in time.
        void set_constant(const std::vector<double> & theta)
        {
            if (static_cast<int>(theta.size()) != parameter_count())
                throw Error(ErrorKind::SizeMismatch, "parameter vector has the wrong length");
            std::fill(coefficients.begin(), coefficients.end(), 0.0);
            for (int p = 0; p < parameter_count(); ++p)
                coefficient(p, 0) = theta[p];
        }

        std::vector<double> parameters_at(double t) const
        {
            const auto phi = time_features(t);
            std::vector<double> theta(parameter_count(), 0.0);
            for (int p = 0; p < parameter_count(); ++p)
            {
                double s = 0.0;
                for (int f = 0; f < time_feature_count; ++f)
                    s += coefficient(p, f) * phi[f];
                theta[p] = s;
            }
            return theta;
        }

        void validate() const
        {
            if (coefficients.size() != static_cast<std::size_t>(parameter_count()) * time_feature_count)
                throw Error(ErrorKind::SizeMismatch, "coefficient array does not match the deformation kind");
            for (double c : coefficients)
                if (!std::isfinite(c))
                    throw Error(ErrorKind::InvalidArgument, "deformation coefficients must be finite");
            if (kind == DeformKind::control_lattice && !((lattice_hi - lattice_lo).array() > 0.0).all())
                throw Error(ErrorKind::InvalidArgument, "lattice box must have positive extent");
        }
    };

    /// (δx, δr, δs, δα) of one Gaussian.
    struct Offsets
    {
        Vec3 dx = Vec3::Zero();
        Quat dr = Quat::Zero();
        Vec3 ds = Vec3::Zero();
        double da = 0.0;
    };

    inline constexpr int offset_components = 11;

    namespace detail
    {
        inline std::array<double, 3> bernstein2(double u)
        {
            return {(1 - u) * (1 - u), 2 * u * (1 - u), u * u};
        }

        inline std::array<double, 3> bernstein2_derivative(double u)
        {
            return {-2 * (1 - u), 2 - 4 * u, 2 * u};
        }

        /// Lattice coordinates clamped to the box; `inside[a]` is false when clamped.
        inline Vec3 lattice_coords(const DeformationModel & m, const Vec3 & x, std::array<bool, 3> & inside)
        {
            Vec3 u;
            for (int a = 0; a < 3; ++a)
            {
                const double v = (x[a] - m.lattice_lo[a]) / (m.lattice_hi[a] - m.lattice_lo[a]);
                inside[a] = v > 0.0 && v < 1.0;
                u[a] = std::clamp(v, 0.0, 1.0);
            }
            return u;
        }

        inline std::size_t lattice_slot(int i, int j, int k) { return static_cast<std::size_t>(i + 3 * (j + 3 * k)) * 3; }

        inline Offsets offsets_from_theta(const DeformationModel & m, const std::vector<double> & th, const Gaussian & g)
        {
            Offsets o;
            const Vec3 & x = g.position;
            switch (m.kind)
            {
                case DeformKind::rigid:
                {
                    const Quat q_raw = identity_quat() + Quat(th[0], th[1], th[2], th[3]);
                    const Quat q = normalize_quat(q_raw);
                    const Vec3 u(th[4], th[5], th[6]);
                    o.dx = quat_to_rotation(q) * x + u - x;
                    o.dr = quat_multiply(q, g.rotation) - g.rotation;
                    break;
                }
                case DeformKind::affine:
                {
                    Mat3 mm;
                    mm << th[0], th[1], th[2], th[3], th[4], th[5], th[6], th[7], th[8];
                    o.dx = mm * x + Vec3(th[9], th[10], th[11]);
                    break;
                }
                case DeformKind::sinusoidal_bend:
                {
                    const Vec3 amp(th[0], th[1], th[2]);
                    const Vec3 w(th[3], th[4], th[5]);
                    o.dx = amp * std::sin(w.dot(x) + th[6]);
                    break;
                }
                case DeformKind::control_lattice:
                {
                    std::array<bool, 3> inside {};
                    const Vec3 u = lattice_coords(m, x, inside);
                    const auto bx = bernstein2(u[0]), by = bernstein2(u[1]), bz = bernstein2(u[2]);
                    for (int k = 0; k < 3; ++k)
                        for (int j = 0; j < 3; ++j)
                            for (int i = 0; i < 3; ++i)
                            {
                                const double b = bx[i] * by[j] * bz[k];
                                const std::size_t s = lattice_slot(i, j, k);
                                o.dx += b * Vec3(th[s], th[s + 1], th[s + 2]);
                            }
                    break;
                }
            }
            return o;
        }
    }

    inline Offsets evaluate_offsets(const DeformationModel & model, const Gaussian & g, double t)
    {
        return detail::offsets_from_theta(model, model.parameters_at(t), g);
    }

    inline constexpr double min_scale = 1e-9;

    /// Additive application followed by renormalization and clamping.
    inline Gaussian apply_offsets(const Gaussian & g, const Offsets & o)
    {
        Gaussian out = g;
        out.position = g.position + o.dx;
        out.rotation = normalize_quat(g.rotation + o.dr);
        out.scale = (g.scale + o.ds).cwiseMax(min_scale);
        out.opacity = std::clamp(g.opacity + o.da, 0.0, 1.0);
        return out;
    }

    /// Canonical → deformed at time t.
    inline Gaussian forward_deform(const DeformationModel & model, const Gaussian & g, double t)
    {
        return apply_offsets(g, evaluate_offsets(model, g, t));
    }

    /// Deformed → canonical at time t. Same map; the model instance is what differs.
    inline Gaussian backward_deform(const DeformationModel & model, const Gaussian & g_def, double t)
    {
        return apply_offsets(g_def, evaluate_offsets(model, g_def, t));
    }

    inline std::vector<Gaussian> deform_all(const DeformationModel & model, const std::vector<Gaussian> & gaussians, double t)
    {
        const auto theta = model.parameters_at(t);
        std::vector<Gaussian> out(gaussians.size());
        parallel_for(gaussians.size(), [&](std::size_t i) {
            out[i] = apply_offsets(gaussians[i], detail::offsets_from_theta(model, theta, gaussians[i]));
        });
        return out;
    }

    /// Gradient with respect to the fields of one Gaussian.
    struct GaussianGrad
    {
        Vec3 position = Vec3::Zero();
        Quat rotation = Quat::Zero();
        Vec3 scale = Vec3::Zero();
        double opacity = 0.0;
    };

    namespace detail
    {
        /// VJP of offsets_from_theta; accumulates into d_theta and returns the
        /// gradient with respect to the input Gaussian.
        inline GaussianGrad offsets_vjp_theta(const DeformationModel & m, const std::vector<double> & th, const Gaussian & g,
                                              const Offsets & up, double * d_theta)
        {
            GaussianGrad gg;
            const Vec3 & x = g.position;
            switch (m.kind)
            {
                case DeformKind::rigid:
                {
                    const Quat q_raw = identity_quat() + Quat(th[0], th[1], th[2], th[3]);
                    const Quat q = normalize_quat(q_raw);
                    const Mat3 r = quat_to_rotation(q);
                    // δx = R x + u − x
                    Quat dq = rotate_vector_vjp(q_raw, x, up.dx);
                    // δr = q ⊗ r − r, q unit
                    dq += normalize_vjp(q_raw, quat_right_matrix(g.rotation).transpose() * up.dr);
                    for (int k = 0; k < 4; ++k)
                        d_theta[k] += dq[k];
                    for (int k = 0; k < 3; ++k)
                        d_theta[4 + k] += up.dx[k];
                    gg.position = (r - Mat3::Identity()).transpose() * up.dx;
                    gg.rotation = quat_left_matrix(q).transpose() * up.dr - up.dr;
                    break;
                }
                case DeformKind::affine:
                {
                    Mat3 mm;
                    mm << th[0], th[1], th[2], th[3], th[4], th[5], th[6], th[7], th[8];
                    for (int row = 0; row < 3; ++row)
                    {
                        for (int col = 0; col < 3; ++col)
                            d_theta[3 * row + col] += up.dx[row] * x[col];
                        d_theta[9 + row] += up.dx[row];
                    }
                    gg.position = mm.transpose() * up.dx;
                    break;
                }
                case DeformKind::sinusoidal_bend:
                {
                    const Vec3 amp(th[0], th[1], th[2]);
                    const Vec3 w(th[3], th[4], th[5]);
                    const double arg = w.dot(x) + th[6];
                    const double s = std::sin(arg), c = std::cos(arg);
                    const double qa = up.dx.dot(amp) * c;
                    for (int k = 0; k < 3; ++k)
                    {
                        d_theta[k] += up.dx[k] * s;
                        d_theta[3 + k] += qa * x[k];
                    }
                    d_theta[6] += qa;
                    gg.position = qa * w;
                    break;
                }
                case DeformKind::control_lattice:
                {
                    std::array<bool, 3> inside {};
                    const Vec3 u = lattice_coords(m, x, inside);
                    const std::array<std::array<double, 3>, 3> b {bernstein2(u[0]), bernstein2(u[1]), bernstein2(u[2])};
                    const std::array<std::array<double, 3>, 3> db {bernstein2_derivative(u[0]), bernstein2_derivative(u[1]),
                                                                   bernstein2_derivative(u[2])};
                    const Vec3 inv_extent = (m.lattice_hi - m.lattice_lo).cwiseInverse();
                    for (int k = 0; k < 3; ++k)
                        for (int j = 0; j < 3; ++j)
                            for (int i = 0; i < 3; ++i)
                            {
                                const std::size_t s = lattice_slot(i, j, k);
                                const double w = b[0][i] * b[1][j] * b[2][k];
                                for (int a = 0; a < 3; ++a)
                                    d_theta[s + a] += w * up.dx[a];
                                const double proj = Vec3(th[s], th[s + 1], th[s + 2]).dot(up.dx);
                                if (inside[0])
                                    gg.position[0] += db[0][i] * b[1][j] * b[2][k] * inv_extent[0] * proj;
                                if (inside[1])
                                    gg.position[1] += b[0][i] * db[1][j] * b[2][k] * inv_extent[1] * proj;
                                if (inside[2])
                                    gg.position[2] += b[0][i] * b[1][j] * db[2][k] * inv_extent[2] * proj;
                            }
                    break;
                }
            }
            // δs and δα do not depend on the input
            return gg;
        }

        /// Spreads dL/dθ over the coefficient matrix: dL/dC = dL/dθ ⊗ φ(t).
        inline void accumulate_coefficients(const std::vector<double> & d_theta, double t, std::vector<double> & d_coeff)
        {
            const auto phi = time_features(t);
            for (std::size_t p = 0; p < d_theta.size(); ++p)
                for (int f = 0; f < time_feature_count; ++f)
                    d_coeff[p * time_feature_count + f] += d_theta[p] * phi[f];
        }

        /// VJP of apply_offsets(g, offsets(g)) for one Gaussian.
        inline GaussianGrad deform_vjp_theta(const DeformationModel & m, const std::vector<double> & th, const Gaussian & g,
                                             const GaussianGrad & up, double * d_theta)
        {
            const Offsets o = offsets_from_theta(m, th, g);
            const Quat r_raw = g.rotation + o.dr;
            const Quat g_raw = normalize_vjp(r_raw, up.rotation);
            Offsets up_off;
            up_off.dx = up.position;
            up_off.dr = g_raw;
            GaussianGrad gg = offsets_vjp_theta(m, th, g, up_off, d_theta);
            gg.position += up.position;
            gg.rotation += g_raw;
            for (int a = 0; a < 3; ++a)
                gg.scale[a] = g.scale[a] + o.ds[a] > min_scale ? up.scale[a] : 0.0;
            const double alpha = g.opacity + o.da;
            gg.opacity = (alpha > 0.0 && alpha < 1.0) ? up.opacity : 0.0;
            return gg;
        }
    }

    struct DeformGradient
    {
        std::vector<double> coefficients;     // dL/dC, same layout as the model
        std::vector<GaussianGrad> gaussians;  // dL/d(input gaussian)
    };

    /**
     * Reverse pass of deform_all: `upstream[i]` is the gradient with respect
     * to the i-th deformed Gaussian.
     */
    inline DeformGradient deform_gradient(const DeformationModel & model, const std::vector<Gaussian> & gaussians, double t,
                                          const std::vector<GaussianGrad> & upstream)
    {
        if (upstream.size() != gaussians.size())
            throw Error(ErrorKind::SizeMismatch, "one upstream gradient per gaussian is required");
        const auto theta = model.parameters_at(t);
        const std::size_t p = theta.size();
        std::vector<double> per(gaussians.size() * p, 0.0);
        DeformGradient out;
        out.gaussians.resize(gaussians.size());
        parallel_for(gaussians.size(), [&](std::size_t i) {
            out.gaussians[i] = detail::deform_vjp_theta(model, theta, gaussians[i], upstream[i], per.data() + i * p);
        });
        std::vector<double> d_theta(p, 0.0);
        for (std::size_t i = 0; i < gaussians.size(); ++i)
            for (std::size_t k = 0; k < p; ++k)
                d_theta[k] += per[i * p + k];
        out.coefficients.assign(model.coefficients.size(), 0.0);
        detail::accumulate_coefficients(d_theta, t, out.coefficients);
        return out;
    }

    namespace detail
    {
        inline std::array<double, offset_components> flatten(const Offsets & o)
        {
            return {o.dx[0], o.dx[1], o.dx[2], o.dr[0], o.dr[1], o.dr[2], o.dr[3], o.ds[0], o.ds[1], o.ds[2], o.da};
        }

        inline Offsets unflatten(const std::array<double, offset_components> & v)
        {
            Offsets o;
            o.dx = Vec3(v[0], v[1], v[2]);
            o.dr = Quat(v[3], v[4], v[5], v[6]);
            o.ds = Vec3(v[7], v[8], v[9]);
            o.da = v[10];
            return o;
        }

        inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
    }

    /**
     * L1 cycle consistency: mean over Gaussians and the 11 offset components
     * of |F_f(G, t) + F_b(G', t)|, G' being the forward-deformed Gaussian.
     */
    inline double cycle_loss(const DeformationModel & forward, const DeformationModel & backward,
                             const std::vector<Gaussian> & gaussians, const std::vector<Gaussian> & deformed, double t)
    {
        if (gaussians.empty())
            throw Error(ErrorKind::EmptyInput, "cycle loss needs at least one gaussian");
        if (deformed.size() != gaussians.size())
            throw Error(ErrorKind::SizeMismatch, "one deformed gaussian per canonical gaussian is required");
        const auto th_f = forward.parameters_at(t);
        const auto th_b = backward.parameters_at(t);
        std::vector<double> per(gaussians.size(), 0.0);
        parallel_for(gaussians.size(), [&](std::size_t i) {
            const auto a = detail::flatten(detail::offsets_from_theta(forward, th_f, gaussians[i]));
            const auto b = detail::flatten(detail::offsets_from_theta(backward, th_b, deformed[i]));
            double s = 0.0;
            for (int c = 0; c < offset_components; ++c)
                s += std::abs(a[c] + b[c]);
            per[i] = s;
        });
        CompensatedSum sum;
        for (double v : per)
            sum.add(v);
        return sum.value() / static_cast<double>(gaussians.size() * offset_components);
    }

    inline double cycle_loss(const DeformationModel & forward, const DeformationModel & backward,
                             const std::vector<Gaussian> & gaussians, double t)
    {
        return cycle_loss(forward, backward, gaussians, deform_all(forward, gaussians, t), t);
    }

    /// Sign of every residual component; the L1 cycle loss is smooth while these hold.
    inline std::vector<signed char> cycle_residual_signs(const DeformationModel & forward, const DeformationModel & backward,
                                                         const std::vector<Gaussian> & gaussians,
                                                         const std::vector<Gaussian> & deformed, double t)
    {
        if (deformed.size() != gaussians.size())
            throw Error(ErrorKind::SizeMismatch, "one deformed gaussian per canonical gaussian is required");
        const auto th_f = forward.parameters_at(t);
        const auto th_b = backward.parameters_at(t);
        std::vector<signed char> out(gaussians.size() * offset_components);
        parallel_for(gaussians.size(), [&](std::size_t i) {
            const auto a = detail::flatten(detail::offsets_from_theta(forward, th_f, gaussians[i]));
            const auto b = detail::flatten(detail::offsets_from_theta(backward, th_b, deformed[i]));
            for (int c = 0; c < offset_components; ++c)
            {
                const double r = a[c] + b[c];
                out[i * offset_components + c] = static_cast<signed char>((r > 0.0) - (r < 0.0));
            }
        });
        return out;
    }

    struct CycleGradient
    {
        double loss = 0.0;
        std::vector<double> forward;          // dL/dC_f
        std::vector<double> backward;         // dL/dC_b
        std::vector<GaussianGrad> gaussians;  // dL/dG, including the path through G'
    };

    /// cycle_loss with G' = forward_deform(G) and its full gradient.
    inline CycleGradient cycle_loss_gradient(const DeformationModel & forward, const DeformationModel & backward,
                                             const std::vector<Gaussian> & gaussians, double t)
    {
        CycleGradient out;
        const std::size_t n = gaussians.size();
        if (n == 0)
            throw Error(ErrorKind::EmptyInput, "cycle loss needs at least one gaussian");
        const auto th_f = forward.parameters_at(t);
        const auto th_b = backward.parameters_at(t);
        const std::size_t pf = th_f.size(), pb = th_b.size();
        const double inv = 1.0 / static_cast<double>(n * offset_components);

        std::vector<double> per_loss(n, 0.0);
        std::vector<double> per_f(n * pf, 0.0), per_b(n * pb, 0.0);
        out.gaussians.resize(n);
        parallel_for(n, [&](std::size_t i) {
            const Gaussian & g = gaussians[i];
            const Offsets of = detail::offsets_from_theta(forward, th_f, g);
            const Gaussian gd = apply_offsets(g, of);
            const Offsets ob = detail::offsets_from_theta(backward, th_b, gd);
            const auto a = detail::flatten(of);
            const auto b = detail::flatten(ob);
            std::array<double, offset_components> s {};
            double l = 0.0;
            for (int c = 0; c < offset_components; ++c)
            {
                l += std::abs(a[c] + b[c]);
                s[c] = detail::sign(a[c] + b[c]) * inv;
            }
            per_loss[i] = l;
            const Offsets up = detail::unflatten(s);
            // direct path through F_f(G)
            GaussianGrad gg = detail::offsets_vjp_theta(forward, th_f, g, up, per_f.data() + i * pf);
            // F_b(G') with G' = apply(G, F_f(G))
            const GaussianGrad g_def = detail::offsets_vjp_theta(backward, th_b, gd, up, per_b.data() + i * pb);
            const GaussianGrad through = detail::deform_vjp_theta(forward, th_f, g, g_def, per_f.data() + i * pf);
            gg.position += through.position;
            gg.rotation += through.rotation;
            gg.scale += through.scale;
            gg.opacity += through.opacity;
            out.gaussians[i] = gg;
        });

        CompensatedSum sum;
        for (double v : per_loss)
            sum.add(v);
        out.loss = sum.value() * inv;
        std::vector<double> df(pf, 0.0), db(pb, 0.0);
        for (std::size_t i = 0; i < n; ++i)
        {
            for (std::size_t k = 0; k < pf; ++k)
                df[k] += per_f[i * pf + k];
            for (std::size_t k = 0; k < pb; ++k)
                db[k] += per_b[i * pb + k];
        }
        out.forward.assign(forward.coefficients.size(), 0.0);
        out.backward.assign(backward.coefficients.size(), 0.0);
        detail::accumulate_coefficients(df, t, out.forward);
        detail::accumulate_coefficients(db, t, out.backward);
        return out;
    }

    /// Rigid model that undoes `model` at time t (constant in time).
    inline DeformationModel inverse_rigid(const DeformationModel & model, double t)
    {
        if (model.kind != DeformKind::rigid)
            throw Error(ErrorKind::InvalidArgument, "closed-form inverse exists for rigid models only");
        const auto th = model.parameters_at(t);
        const Quat q = normalize_quat(identity_quat() + Quat(th[0], th[1], th[2], th[3]));
        const Quat qi = quat_conjugate(q);
        const Vec3 u = -(quat_to_rotation(q).transpose() * Vec3(th[4], th[5], th[6]));
        DeformationModel inv(DeformKind::rigid);
        inv.set_constant({qi[0] - 1.0, qi[1], qi[2], qi[3], u[0], u[1], u[2]});
        return inv;
    }

    /// Rigid translation by u, constant in time.
    inline DeformationModel translation_model(const Vec3 & u)
    {
        DeformationModel m(DeformKind::rigid);
        m.set_constant({0.0, 0.0, 0.0, 0.0, u[0], u[1], u[2]});
        return m;
    }

    /// Field −δx for linear kinds (affine, lattice) and for pure translations.
    inline DeformationModel negated(const DeformationModel & model)
    {
        DeformationModel out = model;
        switch (model.kind)
        {
            case DeformKind::affine:
            case DeformKind::control_lattice:
                for (double & c : out.coefficients)
                    c = -c;
                break;
            case DeformKind::sinusoidal_bend:
                for (int p = 0; p < 3; ++p)
                    for (int f = 0; f < time_feature_count; ++f)
                        out.coefficient(p, f) = -model.coefficient(p, f);
                break;
            case DeformKind::rigid:
                for (int p = 0; p < 4; ++p)
                    for (int f = 0; f < time_feature_count; ++f)
                        if (model.coefficient(p, f) != 0.0)
                            throw Error(ErrorKind::InvalidArgument, "only translations can be negated exactly");
                for (int p = 4; p < 7; ++p)
                    for (int f = 0; f < time_feature_count; ++f)
                        out.coefficient(p, f) = -model.coefficient(p, f);
                break;
        }
        return out;
    }
}
