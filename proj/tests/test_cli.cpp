#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sys/wait.h>

#include "dgmesh/pipeline.hpp"

using namespace dgm;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace
{
    struct Run
    {
        int code = -1;
        std::string out, err;
    };

    fs::path workdir()
    {
        static const fs::path dir = [] {
            const fs::path d = fs::temp_directory_path() / "dgmesh_test_cli";
            fs::remove_all(d);
            fs::create_directories(d);
            return d;
        }();
        return dir;
    }

    Run run(const std::string & args)
    {
        const auto out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
        const std::string cmd = std::string("\"") + DGM_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
        const int status = std::system(cmd.c_str());
        Run r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = read_file(out);
        r.err = read_file(err);
        return r;
    }
}

TEST(Cli, SynthWritesFrames)
{
    const auto dir = workdir() / "synth";
    const auto r = run("synth --shape torus --frames 2 --points 500 --gt-resolution 32 --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    ASSERT_EQ(j["frames"].size(), 2u);
    EXPECT_EQ(j["frames"][0]["genus"], 1);
    EXPECT_TRUE(j["frames"][1]["watertight"].get<bool>());
    EXPECT_EQ(import_ply(dir / "frame_001.ply").size(), 500u);
    EXPECT_TRUE(validate_mesh(import_mesh(dir / "gt_000.obj")).watertight());
}

TEST(Cli, MetricsOfAMeshWithItself)
{
    const auto path = workdir() / "sphere.obj";
    const auto m = uv_sphere(0.8, 48, 24);
    export_mesh(m, path);
    const auto r = run("metrics " + path.string() + " " + path.string() + " --samples 1024 --seed 3");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    double area = 0.0;
    for (std::size_t f = 0; f < m.faces.size(); ++f)
        area += 0.5 * face_area_vector(m, f).norm();
    EXPECT_GT(j["cd"].get<double>(), 0.0);
    EXPECT_LT(j["cd"].get<double>(), 2.0 * area / (M_PI * 1024));
    EXPECT_EQ(j["n_samples"], 1024);
    // same seed, same numbers
    EXPECT_EQ(run("metrics " + path.string() + " " + path.string() + " --samples 1024 --seed 3").out, r.out);
}

TEST(Cli, ValidateReportsGenus)
{
    const auto seq = generate_scene(SceneShape::torus, 1, 200, 1, 32);
    const auto path = workdir() / "torus.ply";
    export_mesh(*seq.frames[0].ground_truth, path);
    const auto r = run("validate " + path.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_EQ(j["genus"], 1);
    EXPECT_TRUE(j["watertight"].get<bool>());
}

TEST(Cli, GradcheckIsSmall)
{
    const auto r = run("gradcheck --resolution 16 --gaussians 100 --probes 8");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(json::parse(r.out)["max_relative_error"].get<double>(), 1e-4);
}

TEST(Cli, ReconstructRuns)
{
    const auto out = workdir() / "rec";
    const auto cfg_path = workdir() / "rec.toml";
    write_file(cfg_path, "scene = \"sphere\"\nframes = 2\npoints = 600\nsteps = 20\nanchor_interval = 10\n"
                         "metric_samples = 128\noutput_dir = \"" + out.string() + "\"\n");
    const auto r = run("reconstruct --config " + cfg_path.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    ASSERT_EQ(j["frames"].size(), 2u);
    EXPECT_EQ(j["frames"][1]["genus"], 0);
    EXPECT_TRUE(fs::exists(out / "mesh_001.obj"));
    EXPECT_TRUE(fs::exists(out / "tracks.csv"));
    EXPECT_TRUE(fs::exists(out / "metrics.csv"));
}

TEST(Cli, MissingConfigIsFileNotFound)
{
    const auto r = run("reconstruct --config " + (workdir() / "nope.toml").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(json::parse(r.err)["error"], "FileNotFound");
}

TEST(Cli, MalformedMeshReportsOffset)
{
    const auto r = run(std::string("validate ") + DGM_TEST_DATA + "/truncated.ply");
    EXPECT_EQ(r.code, 1);
    const auto j = json::parse(r.err);
    EXPECT_EQ(j["error"], "TruncatedBody");
    EXPECT_EQ(j["offset"], fs::file_size(fs::path(DGM_TEST_DATA) / "truncated.ply"));
}

TEST(Cli, UsageErrors)
{
    EXPECT_EQ(run("metrics --bogus a b").code, 2);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("synth --frames 0 --out x").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}
