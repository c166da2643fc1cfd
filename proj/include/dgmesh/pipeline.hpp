#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "scenes.hpp"

namespace dgm
{
    /// One row per (gaussian, frame); alive == false marks a tombstone.
    struct TrackRecord
    {
        std::uint64_t id = 0;
        int frame = 0;
        double t = 0.0;
        Vec3 position = Vec3::Zero();
        int face = -1;
        bool alive = true;
    };

    struct FrameOutcome
    {
        int frame = 0;
        double t = 0.0;
        TriMesh mesh;
        MeshDiagnostics diagnostics;
        std::optional<MetricReport> metrics;
        LossComponents loss;
        double initial_total = 0.0;
        double uniformity = 0.0;
        std::size_t gaussians = 0;
        int anchoring_events = 0;
        int merges = 0;
        int creations = 0;
        bool diverged = false;

        bool degraded() const { return diverged || !diagnostics.watertight(); }
    };

    struct Reconstruction
    {
        std::vector<FrameOutcome> frames;
        std::vector<TrackRecord> tracks;  // sorted by (id, frame)
        OptimState state;
        LossWeights weights;
        int anchor_interval = 0;
        double lap_ratio = 0.0;
    };

    /// Frames from a directory holding frame_000.ply, frame_001.ply, ...
    inline FrameSequence load_sequence(const std::filesystem::path & dir, int max_frames)
    {
        FrameSequence seq;
        std::vector<OrientedPointCloud> clouds;
        for (int k = 0; k < max_frames; ++k)
        {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%03d.ply", k);
            const auto path = dir / name;
            if (!std::filesystem::exists(path))
                break;
            clouds.push_back(import_ply(path));
        }
        if (clouds.empty())
            throw Error(ErrorKind::FileNotFound, "no frame_000.ply in " + dir.string());
        for (std::size_t k = 0; k < clouds.size(); ++k)
        {
            Frame f;
            f.t = frame_time(static_cast<int>(k), static_cast<int>(clouds.size()));
            f.cloud = std::move(clouds[k]);
            for (auto & n : f.cloud.normals)
                n.normalize();
            char name[32];
            std::snprintf(name, sizeof name, "gt_%03d.obj", static_cast<int>(k));
            if (std::filesystem::exists(dir / name))
                f.ground_truth = import_mesh(dir / name);
            seq.frames.push_back(std::move(f));
        }
        return seq;
    }

    inline FrameSequence sequence_for(const PipelineConfig & cfg)
    {
        if (cfg.scene == "ply")
            return load_sequence(cfg.input_dir, cfg.frames);
        return generate_scene(parse_scene_shape(cfg.scene), cfg.frames, static_cast<std::size_t>(cfg.points), cfg.seed,
                              cfg.gt_resolution);
    }

    /// Mean distance from each point to its nearest neighbour.
    inline double mean_nearest_spacing(const std::vector<Vec3> & points)
    {
        if (points.size() < 2)
            throw Error(ErrorKind::EmptyInput, "spacing needs at least two points");
        const UniformGridIndex index(points);
        double s = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i)
            s += std::sqrt(index.nearest(points[i], static_cast<int>(i)).distance2);
        return s / static_cast<double>(points.size());
    }

    /**
     * Canonical set from an oriented cloud: isotropic Gaussians sized by the
     * mean neighbour spacing with the first axis along the normal. With
     * `count` below the cloud size a seeded subset is used.
     */
    inline CanonicalSet initial_canonical(const OrientedPointCloud & cloud, std::size_t count, std::uint64_t seed)
    {
        std::vector<std::size_t> pick(cloud.size());
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        if (count > 0 && count < cloud.size())
        {
            Rng rng(seed);
            for (std::size_t i = 0; i < count; ++i)
                std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
            pick.resize(count);
            std::sort(pick.begin(), pick.end());
        }
        std::vector<Vec3> positions;
        for (auto i : pick)
            positions.push_back(cloud.positions[i]);
        const double spacing = mean_nearest_spacing(positions);
        CanonicalSet set;
        for (auto i : pick)
        {
            Gaussian g;
            g.position = cloud.positions[i];
            g.rotation = quat_aligning_x_to(cloud.normals[i]);
            g.scale = Vec3::Constant(spacing);
            g.opacity = 1.0;
            set.add(g);
        }
        return set;
    }

    inline ObjectiveConfig objective_config_for(const PipelineConfig & cfg)
    {
        ObjectiveConfig obj;
        obj.sigma = cfg.sigma;
        obj.iso = cfg.iso;
        obj.anchor.r_s = cfg.anchor_radius;
        obj.anchor.radius_factor = cfg.anchor_radius_factor;
        obj.anchor.interval = cfg.anchor_interval;
        obj.anchor.mode = parse_matching_mode(cfg.matching_mode);
        return obj;
    }

    inline GridSpec reconstruction_grid(const PipelineConfig & cfg) { return GridSpec::cube(-1.5, 1.5, cfg.resolution); }

    /**
     * Fits one canonical set and a forward/backward model pair through the
     * whole sequence, warm-starting each frame from the previous one. The
     * anchoring schedule counts iterations globally across frames.
     */
    inline Reconstruction reconstruct_sequence(const FrameSequence & seq, const PipelineConfig & cfg)
    {
        cfg.validate();
        seq.validate();
        const GridSpec grid = reconstruction_grid(cfg);
        const ObjectiveConfig obj = objective_config_for(cfg);
        const auto psr_cfg = psr_config_for(grid, obj);

        std::vector<ScalarGrid> targets;
        for (const auto & f : seq.frames)
            targets.push_back(psr::psr_forward(f.cloud, psr_cfg).chi);

        Reconstruction out;
        out.anchor_interval = cfg.anchor_interval;
        out.lap_ratio = cfg.lap_ratio;
        auto & state = out.state;
        state.canonical = initial_canonical(seq.frames[0].cloud, static_cast<std::size_t>(cfg.gaussians), derive_seed(cfg.seed, 100));
        const auto kind = parse_deform_kind(cfg.deform_kind);
        state.forward = DeformationModel(kind);
        state.backward = DeformationModel(kind);
        if (cfg.deform_init_scale > 0.0)
        {
            Rng rf(derive_seed(cfg.seed, 200)), rb(derive_seed(cfg.seed, 201));
            for (auto & c : state.forward.coefficients)
                c = cfg.deform_init_scale * rf.normal();
            for (auto & c : state.backward.coefficients)
                c = cfg.deform_init_scale * rb.normal();
        }

        LossWeights & w = out.weights;
        w.w_fit = cfg.w_fit;
        w.w_anchor = cfg.w_anchor;
        w.w_cycle = cfg.w_cycle;
        w.w_lap = 0.0;
        bool lap_calibrated = !(cfg.lap_ratio > 0.0);

        FitOptions opt;
        opt.steps = cfg.steps;
        opt.step_size = cfg.step_size;
        opt.anchor_interval = cfg.anchor_interval;
        opt.optimize_forward = opt.optimize_backward = !cfg.freeze_deformation;

        std::map<std::uint64_t, Gaussian> dead;  // canonical copies of removed gaussians
        for (std::size_t k = 0; k < seq.frames.size(); ++k)
        {
            const double t = seq.frames[k].t;
            FrameOutcome fo;
            fo.frame = static_cast<int>(k);
            fo.t = t;

            if (!lap_calibrated)
            {
                // the ratio is relative to the fit term at the first frame
                // that has something to fit
                LossWeights probe;
                probe.w_fit = w.w_fit;
                probe.w_lap = probe.w_anchor = probe.w_cycle = 0.0;
                const auto e0 = total_loss(state, targets[k], probe, t, obj);
                double scale = 0.0;
                for (double v : targets[k].values)
                    scale += v * v;
                scale /= static_cast<double>(targets[k].values.size());
                if (e0.fit > 1e-12 * w.w_fit * scale && e0.lap > 0.0)
                {
                    w.w_lap = laplacian_weight_for_ratio(cfg.lap_ratio, e0.fit, e0.lap);
                    lap_calibrated = true;
                }
            }

            opt.first_iteration = static_cast<int>(k) * cfg.steps;
            auto res = fit(state, targets[k], w, t, obj, opt);
            fo.diverged = res.diverged;
            fo.anchoring_events = res.anchoring_events;
            if (!res.trace.empty())
                fo.initial_total = res.trace.front().loss.total;
            for (const auto & rep : res.anchor_reports)
            {
                fo.merges += rep.merges;
                fo.creations += rep.creations;
                for (const auto & g : rep.removed)
                    dead.emplace(g.id, backward_deform(state.backward, g, t));
            }
            state = std::move(res.state);
            // the best state may predate an anchoring event; ids missing
            // from it that were never anchored away are still tracked as dead
            for (const auto & g : state.canonical.gaussians())
                dead.erase(g.id);

            const auto deformed = deform_all(state.forward, state.canonical.gaussians(), t);
            const auto cloud = gaussians_to_cloud(deformed);
            const auto chi = psr::psr_forward(cloud, psr_cfg).chi;
            fo.mesh = marching_cubes(chi, obj.iso);
            fo.mesh.provenance.clear();
            fo.mesh.source_grid.reset();
            fo.diagnostics = validate_mesh(fo.mesh);
            fo.loss = total_loss(state, targets[k], w, t, obj);
            fo.gaussians = deformed.size();
            if (deformed.size() >= 2)
                fo.uniformity = uniformity_metric(cloud.positions);

            std::vector<int> faces(deformed.size(), -1);
            if (!fo.mesh.empty())
                faces = match_gaussians_to_faces(cloud.positions, face_centroids(fo.mesh), obj.anchor.mode,
                                                 obj.anchor.radius_for(fo.mesh))
                            .gaussian_face;
            for (std::size_t i = 0; i < deformed.size(); ++i)
                out.tracks.push_back({deformed[i].id, fo.frame, t, deformed[i].position, faces[i], true});
            for (const auto & [id, g] : dead)
                out.tracks.push_back({id, fo.frame, t, forward_deform(state.forward, g, t).position, -1, false});

            if (seq.frames[k].ground_truth && !fo.mesh.empty())
                fo.metrics = mesh_metric_report(fo.mesh, *seq.frames[k].ground_truth, static_cast<std::size_t>(cfg.metric_samples),
                                                derive_seed(cfg.seed, 300 + k), parse_emd_mode(cfg.emd_mode));
            out.frames.push_back(std::move(fo));
        }
        std::sort(out.tracks.begin(), out.tracks.end(), [](const TrackRecord & a, const TrackRecord & b) {
            return a.id != b.id ? a.id < b.id : a.frame < b.frame;
        });
        return out;
    }

    inline std::string serialize_tracks(const std::vector<TrackRecord> & tracks)
    {
        std::string out = "id,frame,t,x,y,z,face,alive\n";
        for (const auto & r : tracks)
            out += std::to_string(r.id) + "," + std::to_string(r.frame) + "," + format_g9(r.t) + "," + format_g9(r.position.x()) +
                   "," + format_g9(r.position.y()) + "," + format_g9(r.position.z()) + "," + std::to_string(r.face) + "," +
                   (r.alive ? "1" : "0") + "\n";
        return out;
    }

    inline void export_tracks(const std::vector<TrackRecord> & tracks, const std::filesystem::path & path)
    {
        write_file(path, serialize_tracks(tracks));
    }

    /// One row per frame with the metrics, loss terms and the run's knobs.
    inline std::string serialize_metrics_log(const Reconstruction & rec)
    {
        std::string out = "frame,t,cd,emd,fit,anchor_loss,cycle_loss,lap,total,initial_total,uniformity,gaussians,"
                          "anchoring_events,merges,creations,mesh_faces,genus,watertight,diverged,degraded,anchor_interval,lap_ratio,w_lap\n";
        auto num = [](double v) { return format_g9(v); };
        for (const auto & f : rec.frames)
        {
            out += std::to_string(f.frame) + "," + num(f.t) + ",";
            out += f.metrics ? num(f.metrics->cd) + "," + num(f.metrics->emd) : std::string("nan,nan");
            out += "," + num(f.loss.fit) + "," + num(f.loss.anchor) + "," + num(f.loss.cycle) + "," + num(f.loss.lap) + "," +
                   num(f.loss.total) + "," + num(f.initial_total) + "," + num(f.uniformity) + "," + std::to_string(f.gaussians) +
                   "," + std::to_string(f.anchoring_events) + "," + std::to_string(f.merges) + "," +
                   std::to_string(f.creations) + "," + std::to_string(f.mesh.faces.size()) + "," +
                   std::to_string(f.diagnostics.total_genus()) + "," + (f.diagnostics.watertight() ? "1" : "0") + "," +
                   (f.diverged ? "1" : "0") + "," + (f.degraded() ? "1" : "0") + "," + std::to_string(rec.anchor_interval) + "," + num(rec.lap_ratio) + "," +
                   num(rec.weights.w_lap) + "\n";
        }
        return out;
    }

    /// Meshes, tracks, metrics log and the resolved config under `dir`.
    inline void write_outputs(const Reconstruction & rec, const PipelineConfig & cfg, const std::filesystem::path & dir)
    {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
            throw Error(ErrorKind::IoError, "cannot create " + dir.string());
        for (const auto & f : rec.frames)
        {
            char name[32];
            std::snprintf(name, sizeof name, "mesh_%03d.obj", f.frame);
            export_mesh(f.mesh, dir / name);
        }
        export_tracks(rec.tracks, dir / "tracks.csv");
        write_file(dir / "metrics.csv", serialize_metrics_log(rec));
        write_file(dir / "config.toml", serialize_config(cfg));
    }

    /// A loss evaluation point with every term active.
    struct GradCheckScenario
    {
        OptimState state;
        ScalarGrid target;
        LossWeights weights;
        ObjectiveConfig objective;
        double t = 0.3;
    };

    /**
     * Frame-0 samples of `shape` as the target; `n_gaussians` of them,
     * jittered, as the canonical set; small random lattice models.
     */
    inline GradCheckScenario make_gradcheck_scenario(SceneShape shape, int resolution, std::size_t n_gaussians, std::uint64_t seed)
    {
        const auto seq = generate_scene(shape, 1, 2000, seed, 48);
        GradCheckScenario s;
        const GridSpec grid = GridSpec::cube(-1.5, 1.5, resolution);
        grid.validate();
        s.target = psr::psr_forward(seq.frames[0].cloud, psr_config_for(grid, s.objective)).chi;
        s.state.canonical = initial_canonical(seq.frames[0].cloud, n_gaussians, derive_seed(seed, 1));
        Rng rng(derive_seed(seed, 2));
        for (auto & g : s.state.canonical.mutable_gaussians())
        {
            g.position += 0.02 * Vec3(rng.normal(), rng.normal(), rng.normal());
            g.rotation = normalize_quat(g.rotation + 0.05 * Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        }
        s.state.forward = DeformationModel(DeformKind::control_lattice);
        s.state.backward = DeformationModel(DeformKind::control_lattice);
        for (auto & c : s.state.forward.coefficients)
            c = 0.01 * rng.normal();
        for (auto & c : s.state.backward.coefficients)
            c = 0.01 * rng.normal();
        s.weights.w_lap = 1.0;
        return s;
    }
}
