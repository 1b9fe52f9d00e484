// Command-line front end: voxelize / enhance / train-toy / bench-wkv /
// gradcheck / metrics / describe. Exit codes: 0 success, 1 usage error,
// 2 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "evrwkv/bench.hpp"
#include "evrwkv/config.hpp"
#include "evrwkv/event.hpp"
#include "evrwkv/image_io.hpp"
#include "evrwkv/model.hpp"
#include "evrwkv/train.hpp"

namespace {

using evr::RunConfig;
using evr::Tensor;

// Written atomically (temp + rename) so readers never see partial files.
void write_text(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        out << text;
        if (!out.flush()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty())
        std::cout << text;
    else
        write_text(out_path, text);
}

evr::VoxelNorm parse_norm(const std::string& s) {
    if (s == "none") return evr::VoxelNorm::none;
    if (s == "max_abs") return evr::VoxelNorm::max_abs;
    if (s == "std_nonzero") return evr::VoxelNorm::std_nonzero;
    throw std::invalid_argument("unknown voxel_norm '" + s + "'");
}

evr::EventFormat parse_format(const std::string& s) {
    if (s == "csv") return evr::EventFormat::csv;
    if (s == "binary") return evr::EventFormat::binary;
    throw std::invalid_argument("unknown event format '" + s + "'");
}

Tensor load_voxel(const std::string& events_path, const std::string& format, const RunConfig& cfg,
                  int H, int W, std::uint64_t t_start, std::uint64_t t_end) {
    evr::EventStream s = evr::parse_events(events_path, parse_format(format), W, H);
    evr::VoxelGrid grid = (t_end > t_start) ? evr::voxelize(s, cfg.bins, H, W, t_start, t_end)
                                            : evr::voxelize(s, cfg.bins, H, W);
    return evr::normalize_voxel(grid, parse_norm(cfg.voxel_norm)).data;
}

std::string metrics_json(const Tensor& a, const Tensor& b) {
    nlohmann::json j;
    j["psnr_db"] = evr::psnr(a, b);
    j["ssim"] = evr::ssim_metric(a, b);
    j["ms_ssim"] = evr::ms_ssim_metric(a, b);
    return j.dump(2) + "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event-guided low-light image enhancement toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // let global flags appear after the subcommand name

    std::string config_path, out_path, wkv_exponent;
    std::uint64_t seed = 0;
    bool seed_set = false, no_eisfe = false, no_spatial = false, no_channel = false;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "RNG seed (overrides config)")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_path, "output file or directory");
    app.add_flag("--no-eisfe", no_eisfe, "replace the fusion module by a plain average");
    app.add_flag("--no-spatial-mix", no_spatial, "disable the spatial-mix sublayer");
    app.add_flag("--no-channel-mix", no_channel, "disable the channel-mix sublayer");
    app.add_option("--wkv-exponent", wkv_exponent, "vrwkv | grouped")
        ->check(CLI::IsMember({"vrwkv", "grouped"}));

    // voxelize
    auto* vox = app.add_subcommand("voxelize", "accumulate an event stream into a voxel grid");
    std::string vox_events, vox_format = "csv";
    int vox_w = 0, vox_h = 0;
    std::uint64_t vox_t0 = 0, vox_t1 = 0;
    vox->add_option("--events", vox_events, "event stream")->required()->check(CLI::ExistingFile);
    vox->add_option("--format", vox_format)->check(CLI::IsMember({"csv", "binary"}));
    vox->add_option("--width", vox_w, "sensor width (0 = infer)");
    vox->add_option("--height", vox_h, "sensor height (0 = infer)");
    vox->add_option("--t-start", vox_t0, "window start, microseconds");
    vox->add_option("--t-end", vox_t1, "window end, microseconds (0 = full stream)");

    // enhance
    auto* enh = app.add_subcommand("enhance", "enhance one low-light image");
    std::string enh_image, enh_events, enh_format = "csv";
    std::uint64_t enh_t0 = 0, enh_t1 = 0;
    enh->add_option("--image", enh_image, "low-light PPM")->required()->check(CLI::ExistingFile);
    enh->add_option("--events", enh_events, "event stream")->required()->check(CLI::ExistingFile);
    enh->add_option("--format", enh_format)->check(CLI::IsMember({"csv", "binary"}));
    enh->add_option("--t-start", enh_t0, "window start, microseconds");
    enh->add_option("--t-end", enh_t1, "window end, microseconds (0 = full stream)");

    // train-toy
    auto* toy = app.add_subcommand("train-toy", "overfit a single image pair");
    std::string toy_low, toy_gt, toy_events, toy_format = "csv";
    toy->add_option("--low", toy_low, "low-light PPM")->required()->check(CLI::ExistingFile);
    toy->add_option("--gt", toy_gt, "ground-truth PPM")->required()->check(CLI::ExistingFile);
    toy->add_option("--events", toy_events, "event stream")->required()->check(CLI::ExistingFile);
    toy->add_option("--format", toy_format)->check(CLI::IsMember({"csv", "binary"}));

    // bench-wkv
    auto* bench = app.add_subcommand("bench-wkv", "time the attention kernels over sequence length");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter group");

    // metrics
    auto* met = app.add_subcommand("metrics", "PSNR / SSIM / MS-SSIM between two images");
    std::string met_image, met_gt;
    met->add_option("--image", met_image)->required()->check(CLI::ExistingFile);
    met->add_option("--gt", met_gt)->required()->check(CLI::ExistingFile);

    // describe
    auto* desc = app.add_subcommand("describe", "parameter ledger for the configured model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;  // 0 covers --help; everything else is a usage error
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = evr::load_config(config_path);
        if (seed_set) cfg.seed = seed;
        if (no_eisfe) cfg.use_eisfe = false;
        if (no_spatial) cfg.use_spatial_mix = false;
        if (no_channel) cfg.use_channel_mix = false;
        if (!wkv_exponent.empty()) cfg.wkv_exponent = wkv_exponent;
        cfg.validate();

        if (*vox) {
            evr::EventStream s = evr::parse_events(vox_events, parse_format(vox_format), vox_w, vox_h);
            evr::VoxelGrid grid = (vox_t1 > vox_t0)
                                      ? evr::voxelize(s, cfg.bins, s.height, s.width, vox_t0, vox_t1)
                                      : evr::voxelize(s, cfg.bins, s.height, s.width);
            grid = evr::normalize_voxel(grid, parse_norm(cfg.voxel_norm));
            std::ostringstream text;
            text << grid.data.dim(0) << " " << grid.data.dim(1) << " " << grid.data.dim(2) << "\n";
            text.precision(17);
            for (std::int64_t i = 0; i < grid.data.size(); ++i) text << grid.data[i] << "\n";
            emit(out_path, text.str());
            std::cerr << "events " << s.events.size() << ", dropped " << grid.dropped << "\n";
        } else if (*enh) {
            Tensor image = evr::read_image(enh_image);
            Tensor voxel = load_voxel(enh_events, enh_format, cfg, image.dim(1), image.dim(2),
                                      enh_t0, enh_t1);
            evr::ModelParams params;
            params.seed = cfg.seed;
            Tensor en = evr::clamp01(evr::enhance_forward(image, voxel, params, cfg)->t);
            evr::write_image(out_path.empty() ? "enhanced.ppm" : out_path, en);
        } else if (*toy) {
            Tensor low = evr::read_image(toy_low);
            Tensor gt = evr::read_image(toy_gt);
            Tensor voxel = load_voxel(toy_events, toy_format, cfg, low.dim(1), low.dim(2), 0, 0);
            std::string dir = out_path.empty() ? "." : out_path;
            std::filesystem::create_directories(dir);
            std::ostringstream curve;
            evr::ToyResult res = evr::train_toy(low, gt, voxel, cfg, &curve);
            write_text(dir + "/curve.csv", curve.str());
            evr::write_image(dir + "/initial.ppm", res.initial_output);
            evr::write_image(dir + "/final.ppm", res.final_output);
            nlohmann::json j;
            j["steps_run"] = res.steps_run;
            j["psnr_initial_db"] = res.psnr_initial;
            j["psnr_final_db"] = res.psnr_final;
            j["ssim_final"] = res.ssim_final;
            write_text(dir + "/result.json", j.dump(2) + "\n");
            std::cout << "psnr " << res.psnr_initial << " -> " << res.psnr_final << " dB over "
                      << res.steps_run << " steps\n";
        } else if (*bench) {
            evr::BenchResult res = evr::bench_wkv();
            emit(out_path, res.csv());
            std::cerr << "slope naive " << res.slope_naive << ", scan " << res.slope_scan
                      << ", max rel diff " << res.max_rel_diff << "\n";
            if (res.max_rel_diff > 1e-8) {
                std::cerr << "kernel implementations disagree\n";
                return 2;
            }
        } else if (*gc) {
            evr::GradcheckReport rep = evr::gradcheck_model(cfg);
            std::ostringstream text;
            for (const auto& g : rep.groups) text << g.name << " " << g.max_rel_err << "\n";
            text << "worst " << rep.worst << (rep.pass ? " pass" : " FAIL") << "\n";
            emit(out_path, text.str());
            if (!rep.pass) return 2;
        } else if (*met) {
            emit(out_path, metrics_json(evr::read_image(met_image), evr::read_image(met_gt)));
        } else if (*desc) {
            emit(out_path, evr::describe_model(cfg));
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
