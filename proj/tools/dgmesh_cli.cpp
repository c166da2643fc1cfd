#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgmesh/dgmesh.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace
{
    struct CommonFlags
    {
        std::optional<std::uint64_t> seed;
        std::string config;
        std::string out;
        int threads = 1;
    };

    void add_common(CLI::App * cmd, CommonFlags & f)
    {
        cmd->add_option("--seed", f.seed, "Random seed");
        cmd->add_option("--config", f.config, "Config file");
        cmd->add_option("--out", f.out, "Output path");
        cmd->add_option("--threads", f.threads, "Worker threads (outputs do not depend on it)")->check(CLI::Range(1, 1024));
    }

    dgm::PipelineConfig config_from(const CommonFlags & f)
    {
        dgm::PipelineConfig cfg;
        if (!f.config.empty())
            cfg = dgm::load_config(f.config);
        if (f.seed)
            cfg.seed = *f.seed;
        if (!f.out.empty())
            cfg.output_dir = f.out;
        cfg.threads = f.threads;
        cfg.validate();
        return cfg;
    }

    json metric_json(const dgm::MetricReport & r)
    {
        return {{"cd", r.cd},
                {"emd", r.emd},
                {"n_samples", r.n_samples},
                {"seed", r.seed},
                {"units_scale", r.units_scale},
                {"emd_mode", r.emd_mode == dgm::EmdMode::exact ? "exact" : "entropic"}};
    }

    json diagnostics_json(const dgm::MeshDiagnostics & d, const dgm::TriMesh & m)
    {
        json comps = json::array();
        for (const auto & c : d.component_info)
            comps.push_back({{"vertices", c.vertices}, {"edges", c.edges}, {"faces", c.faces}, {"euler", c.euler},
                             {"closed", c.closed}, {"genus", c.genus}});
        return {{"vertices", m.vertices.size()},
                {"faces", m.faces.size()},
                {"watertight", d.watertight()},
                {"edge_manifold", d.edge_manifold},
                {"consistent_orientation", d.consistent_orientation},
                {"boundary_edges", d.boundary_edges},
                {"nonmanifold_edges", d.nonmanifold_edges},
                {"components", d.components},
                {"euler_characteristic", d.euler_characteristic},
                {"genus", d.total_genus()},
                {"component_info", comps}};
    }

    void emit(const json & j, const CommonFlags & f, bool write_out)
    {
        const std::string text = j.dump(2) + "\n";
        if (write_out && !f.out.empty())
            dgm::write_file(f.out, text);
        std::cout << text;
    }

    int error_line(std::string_view kind, const std::string & message, std::optional<std::uint64_t> index = std::nullopt,
                   std::optional<std::uint64_t> offset = std::nullopt)
    {
        json j = {{"error", kind}, {"message", message}};
        if (index)
            j["index"] = *index;
        if (offset)
            j["offset"] = *offset;
        std::cerr << j.dump() << "\n";
        return 1;
    }
}

int main(int argc, char ** argv)
{
    CLI::App app{"Dynamic mesh reconstruction from oriented point sequences"};
    app.require_subcommand(1);

    CommonFlags synth_f, rec_f, met_f, grad_f, val_f;

    auto * synth = app.add_subcommand("synth", "Generate an analytic scene: frame_NNN.ply samples and gt_NNN.obj meshes");
    std::string shape = "sphere";
    int frames = 1, points = 2000, gt_res = 64;
    synth->add_option("--shape", shape, "sphere, torus, sphere_to_torus or bending_bar");
    synth->add_option("--frames", frames, "Frame count")->check(CLI::PositiveNumber);
    synth->add_option("--points", points, "Samples per frame")->check(CLI::Range(100, 100000000));
    synth->add_option("--gt-resolution", gt_res, "Ground-truth grid resolution")->check(CLI::Range(8, 512));
    add_common(synth, synth_f);

    auto * rec = app.add_subcommand("reconstruct", "Reconstruct a sequence: meshes, tracks.csv, metrics.csv");
    add_common(rec, rec_f);

    auto * met = app.add_subcommand("metrics", "Chamfer and earth mover's distance between two meshes");
    std::string mesh_a, mesh_b;
    int samples = 0;
    std::string emd_mode;
    met->add_option("a", mesh_a, "Predicted mesh (.obj or .ply)")->required();
    met->add_option("b", mesh_b, "Reference mesh (.obj or .ply)")->required();
    met->add_option("--samples", samples, "Surface samples per mesh")->check(CLI::PositiveNumber);
    met->add_option("--emd", emd_mode, "exact or entropic");
    add_common(met, met_f);

    auto * grad = app.add_subcommand("gradcheck", "Finite-difference check of the full loss gradient");
    std::string grad_shape = "sphere";
    int grad_res = 32, probes = 24, grad_gaussians = 400;
    double eps_cells = 1e-4;
    grad->add_option("--shape", grad_shape, "Scene shape");
    grad->add_option("--resolution", grad_res, "Grid resolution (power of two)");
    grad->add_option("--probes", probes, "Random coordinates to probe")->check(CLI::PositiveNumber);
    grad->add_option("--gaussians", grad_gaussians, "Gaussians in the canonical set")->check(CLI::Range(10, 100000));
    grad->add_option("--eps", eps_cells, "Step in grid cells")->check(CLI::PositiveNumber);
    add_common(grad, grad_f);

    auto * val = app.add_subcommand("validate", "Topology diagnostics of a mesh");
    std::string val_mesh;
    val->add_option("mesh", val_mesh, "Mesh (.obj or .ply)")->required();
    add_common(val, val_f);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp & e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp & e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError & e)
    {
        error_line("UsageError", e.what());
        return 2;
    }

    try
    {
        if (synth->parsed())
        {
            auto cfg = config_from(synth_f);
            dgm::set_num_threads(cfg.threads);
            if (synth_f.out.empty())
                throw dgm::Error(dgm::ErrorKind::InvalidArgument, "synth needs --out");
            if (synth->count("--shape") || synth_f.config.empty())
                cfg.scene = shape;
            if (synth->count("--frames") || synth_f.config.empty())
                cfg.frames = frames;
            if (synth->count("--points") || synth_f.config.empty())
                cfg.points = points;
            if (synth->count("--gt-resolution") || synth_f.config.empty())
                cfg.gt_resolution = gt_res;
            cfg.validate();
            const auto seq = dgm::generate_scene(dgm::parse_scene_shape(cfg.scene), cfg.frames,
                                                 static_cast<std::size_t>(cfg.points), cfg.seed, cfg.gt_resolution);
            const fs::path dir = synth_f.out;
            std::error_code ec;
            fs::create_directories(dir, ec);
            if (ec)
                throw dgm::Error(dgm::ErrorKind::IoError, "cannot create " + dir.string());
            json out = {{"frames", json::array()}};
            for (std::size_t k = 0; k < seq.frames.size(); ++k)
            {
                char ply[32], obj[32];
                std::snprintf(ply, sizeof ply, "frame_%03zu.ply", k);
                std::snprintf(obj, sizeof obj, "gt_%03zu.obj", k);
                dgm::export_ply(seq.frames[k].cloud, dir / ply);
                dgm::export_mesh(*seq.frames[k].ground_truth, dir / obj);
                const auto d = dgm::validate_mesh(*seq.frames[k].ground_truth);
                out["frames"].push_back({{"frame", k},
                                         {"t", seq.frames[k].t},
                                         {"points", ply},
                                         {"mesh", obj},
                                         {"genus", d.total_genus()},
                                         {"watertight", d.watertight()}});
            }
            std::cout << out.dump(2) << "\n";
        }
        else if (rec->parsed())
        {
            const auto cfg = config_from(rec_f);
            dgm::set_num_threads(cfg.threads);
            const auto seq = dgm::sequence_for(cfg);
            const auto result = dgm::reconstruct_sequence(seq, cfg);
            dgm::write_outputs(result, cfg, cfg.output_dir);
            json out = {{"output_dir", cfg.output_dir}, {"w_lap", result.weights.w_lap}, {"frames", json::array()}};
            for (const auto & f : result.frames)
            {
                json row = {{"frame", f.frame},           {"t", f.t},
                            {"faces", f.mesh.faces.size()}, {"genus", f.diagnostics.total_genus()},
                            {"watertight", f.diagnostics.watertight()}, {"degraded", f.degraded()},
                            {"gaussians", f.gaussians}};
                if (f.metrics)
                    row["metrics"] = metric_json(*f.metrics);
                out["frames"].push_back(row);
            }
            std::cout << out.dump(2) << "\n";
        }
        else if (met->parsed())
        {
            auto cfg = config_from(met_f);
            dgm::set_num_threads(cfg.threads);
            if (samples > 0)
                cfg.metric_samples = samples;
            if (!emd_mode.empty())
                cfg.emd_mode = emd_mode;
            cfg.validate();
            const auto a = dgm::import_mesh(mesh_a);
            const auto b = dgm::import_mesh(mesh_b);
            const auto report = dgm::mesh_metric_report(a, b, static_cast<std::size_t>(cfg.metric_samples), cfg.seed,
                                                        dgm::parse_emd_mode(cfg.emd_mode));
            emit(metric_json(report), met_f, true);
        }
        else if (grad->parsed())
        {
            const auto cfg = config_from(grad_f);
            dgm::set_num_threads(cfg.threads);
            auto sc = dgm::make_gradcheck_scenario(dgm::parse_scene_shape(grad_shape), grad_res,
                                                   static_cast<std::size_t>(grad_gaussians), cfg.seed);
            if (!grad_f.config.empty())
            {
                sc.objective.sigma = cfg.sigma;
                sc.objective.anchor = dgm::objective_config_for(cfg).anchor;
            }
            const double h = sc.target.spec.spacing;
            const auto r = dgm::grad_check(sc.state, sc.target, sc.weights, sc.t, sc.objective, probes,
                                           eps_cells * h, dgm::derive_seed(cfg.seed, 9));
            emit({{"max_relative_error", r.max_relative_error},
                  {"probes", r.probes.size()},
                  {"nonsmooth_skipped", r.nonsmooth_skipped},
                  {"eps", eps_cells * h}},
                 grad_f, true);
        }
        else if (val->parsed())
        {
            const auto cfg = config_from(val_f);
            dgm::set_num_threads(cfg.threads);
            const auto mesh = dgm::import_mesh(val_mesh);
            emit(diagnostics_json(dgm::validate_mesh(mesh), mesh), val_f, true);
        }
    }
    catch (const dgm::Error & e)
    {
        return error_line(dgm::to_string(e.kind()), e.what(), e.index(), e.offset());
    }
    catch (const std::exception & e)
    {
        return error_line("InternalError", e.what());
    }
    return 0;
}
