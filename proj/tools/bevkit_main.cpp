// bevkit: camera-parameter-decoupled BEV mapping toolkit CLI.
//
// Subcommands: dataset, render, roundtrip, train, eval, augcheck, rig, replay.
// Every command writes a manifest.json next to its outputs; replay re-runs a
// command from its manifest. Exit codes: 0 success, 1 validation failure,
// 2 I/O failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "bevkit/augment.hpp"
#include "bevkit/common.hpp"
#include "bevkit/crossview.hpp"
#include "bevkit/evaluation.hpp"
#include "bevkit/geometry.hpp"
#include "bevkit/ipm.hpp"
#include "bevkit/network.hpp"
#include "bevkit/raster.hpp"
#include "bevkit/synthworld.hpp"
#include "bevkit/training.hpp"

namespace fs = std::filesystem;
using namespace bevkit;

namespace {

int dispatch(const std::vector<std::string>& args);

// CLI11's vector overload consumes args in reverse order. Returns -1 to
// continue, otherwise the exit code (help prints and returns 0).
int parse_cli(CLI::App& app, const std::vector<std::string>& args) {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
        return -1;
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "bevkit: argument error: " << e.what() << "\n";
        return 1;
    }
}

std::string resolve_out(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    if (const char* root = std::getenv("BEVKIT_OUT_ROOT")) return (fs::path(root) / path).string();
    return path;
}

std::uint64_t hash_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash " + p.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

// Manifest: the full command line, seeds/config paths, and a hash per output
// artifact. Re-running the stored args reproduces the outputs bitwise in
// single-thread mode.
void write_manifest(const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& args, const nlohmann::json& extra,
                    const std::vector<fs::path>& outputs) {
    nlohmann::json j;
    j["toolkit_version"] = kVersion;
    j["command"] = command;
    j["args"] = args;
    j["meta"] = extra;
    nlohmann::json arts = nlohmann::json::array();
    std::vector<fs::path> sorted = outputs;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& p : sorted) {
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(hash_file(p)));
        arts.push_back({{"path", fs::relative(p, dir).string()}, {"fnv1a64", hex}});
    }
    j["artifacts"] = arts;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

std::vector<fs::path> tree_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    return files;
}

CameraRig rig_from_arg(const std::string& arg, const GridSpec& grid) {
    if (arg.rfind("preset:", 0) == 0) return rig_preset(arg.substr(7), grid);
    return load_rig(arg);
}

SceneParams scene_params_from_args(const std::string& params_file, const std::string& grid_preset) {
    SceneParams p;
    if (grid_preset == "reduced") p.grid = ModelConfig::reduced().grid;
    else if (grid_preset == "standard") p.grid = GridSpec::standard();
    else if (!grid_preset.empty()) throw std::invalid_argument("--grid-preset must be standard|reduced");
    if (!params_file.empty()) {
        std::ifstream in(params_file);
        if (!in) throw std::runtime_error("cannot open scene params " + params_file);
        nlohmann::json j;
        in >> j;
        const GridSpec keep = p.grid;
        p = SceneParams::from_json(j);
        if (!j.contains("grid")) p.grid = keep;
    }
    return p;
}

// --- dataset --------------------------------------------------------------------

int cmd_dataset(const std::vector<std::string>& args) {
    CLI::App app{"generate seeded synthetic scene archives"};
    int n = 10;
    std::uint64_t seed = 1;
    std::string out, params_file, grid_preset = "reduced";
    app.add_option("--n", n, "number of scenes")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "base seed");
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--params", params_file, "scene params JSON");
    app.add_option("--grid-preset", grid_preset, "standard|reduced");
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;

    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    const SceneParams params = scene_params_from_args(params_file, grid_preset);
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        save_scene(generate_scene(seed + static_cast<std::uint64_t>(i), params),
                   (dir / name).string());
    }
    write_manifest(dir, "dataset", args,
                   {{"n", n}, {"seed", seed}, {"grid_preset", grid_preset}}, tree_files(dir));
    std::cout << "dataset: wrote " << n << " scenes to " << dir.string() << "\n";
    return 0;
}

// --- render ---------------------------------------------------------------------

int cmd_render(const std::vector<std::string>& args) {
    CLI::App app{"render perspective views of a scene"};
    std::string scene_dir, rig_arg = "preset:ring6", out, sampling = "bilinear";
    int width = 352, height = 128, threads = 1;
    double plane_h = 0.0;
    app.add_option("--scene", scene_dir, "scene archive directory")->required();
    app.add_option("--rig", rig_arg, "rig JSON path or preset:<name>");
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--width", width);
    app.add_option("--height", height);
    app.add_option("--sampling", sampling, "nearest|bilinear");
    app.add_option("--plane-height", plane_h, "hypothetical ground-plane height");
    app.add_option("--threads", threads);
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;

    if (sampling != "nearest" && sampling != "bilinear")
        throw std::invalid_argument("--sampling must be nearest|bilinear");
    const Scene scene = load_scene(scene_dir);
    const CameraRig rig = rig_from_arg(rig_arg, scene.params.grid);
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    const auto views = render_perspective(
        scene, rig, plane_h, {width, height},
        sampling == "nearest" ? Sampling::nearest : Sampling::bilinear, threads);
    for (std::size_t i = 0; i < views.size(); ++i)
        save_image_bevr(views[i], (dir / ("cam_" + rig.cameras[i].name + ".bevr")).string());
    write_manifest(dir, "render", args, {{"scene", scene_dir}, {"cameras", views.size()}},
                   tree_files(dir));
    std::cout << "render: wrote " << views.size() << " views to " << dir.string() << "\n";
    return 0;
}

// --- roundtrip ------------------------------------------------------------------

int cmd_roundtrip(const std::vector<std::string>& args) {
    CLI::App app{"verify the render/warp geometric identity on a scene"};
    std::string scene_dir, rig_arg = "preset:matched", out;
    int threads = 1;
    double psnr_floor = 40.0;
    app.add_option("--scene", scene_dir, "scene archive directory")->required();
    app.add_option("--rig", rig_arg, "rig JSON path or preset:<name>");
    app.add_option("--out", out, "report directory (optional)");
    app.add_option("--threads", threads);
    app.add_option("--psnr-floor", psnr_floor, "bilinear PSNR pass threshold (dB)");
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;

    const Scene scene = load_scene(scene_dir);
    const GridSpec grid = scene.params.grid;
    const CameraRig rig = rig_from_arg(rig_arg, grid);
    std::vector<std::pair<int, int>> payload;
    for (const auto& cam : rig.cameras) payload.emplace_back(cam.width, cam.height);
    const IpmLut lut = build_ipm_lut(grid, rig, 0.0, payload, threads);
    const MapRaster mask = visibility_mask(lut);

    // nearest chain must be exact on visible cells
    std::vector<Image> views_n, views_b;
    for (const auto& cam : rig.cameras) {
        views_n.push_back(render_raster(scene.ground_texture, cam, 0.0, {cam.width, cam.height},
                                        Sampling::nearest, kHorizonColor, threads));
        views_b.push_back(render_raster(scene.ground_texture, cam, 0.0, {cam.width, cam.height},
                                        Sampling::bilinear, kHorizonColor, threads));
    }
    const MapRaster back_n = warp_to_bev(views_n, lut, Sampling::nearest, Merge::mean,
                                         RasterKind::image, threads);
    const MapRaster back_b = warp_to_bev(views_b, lut, Sampling::bilinear, Merge::mean,
                                         RasterKind::image, threads);

    std::size_t visible = 0, exact = 0;
    double se = 0.0;
    const std::size_t plane = mask.data.size();
    for (std::size_t i = 0; i < plane; ++i) {
        if (mask.data[i] == 0.0f) continue;
        ++visible;
        bool cell_exact = true;
        for (int c = 0; c < 3; ++c) {
            const std::size_t k = c * plane + i;
            if (back_n.data[k] != scene.ground_texture.data[k]) cell_exact = false;
            const double d = static_cast<double>(back_b.data[k]) - scene.ground_texture.data[k];
            se += d * d;
        }
        exact += cell_exact;
    }
    const double mse = visible ? se / (3.0 * visible) : 0.0;
    const double psnr = mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : std::numeric_limits<double>::infinity();
    const double mask_frac = static_cast<double>(visible) / plane;
    const bool pass = visible > 0 && exact == visible && psnr >= psnr_floor;

    std::cout << "roundtrip: visible_fraction=" << mask_frac << " exact=" << exact << "/" << visible
              << " bilinear_psnr_db=" << psnr << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    if (!out.empty()) {
        const fs::path dir = resolve_out(out);
        fs::create_directories(dir);
        nlohmann::json j = {{"visible_fraction", mask_frac},
                            {"exact_cells", exact},
                            {"visible_cells", visible},
                            {"bilinear_psnr_db", psnr},
                            {"pass", pass}};
        std::ofstream o(dir / "roundtrip.json");
        o << j.dump(2) << "\n";
        write_manifest(dir, "roundtrip", args, j, tree_files(dir));
    }
    return pass ? 0 : 1;
}

// --- train ----------------------------------------------------------------------

int cmd_train(const std::vector<std::string>& args) {
    CLI::App app{"train the triadic model on a scene dataset"};
    std::string config_path, resume;
    app.add_option("--config", config_path, "training config JSON")->required();
    app.add_option("--resume", resume, "checkpoint to resume from");
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;

    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config " + config_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("train config: malformed JSON: ") + e.what());
    }
    TrainConfig cfg = TrainConfig::from_json(j);
    cfg.out_dir = resolve_out(cfg.out_dir);

    Trainer<float> trainer(cfg);
    trainer.load_dataset();
    if (!resume.empty()) trainer.resume_from(resume);
    trainer.train();
    const fs::path dir = cfg.out_dir;
    write_manifest(dir, "train", args,
                   {{"config", config_path}, {"seed", cfg.seed}, {"steps", cfg.steps}},
                   tree_files(dir));
    std::cout << "train: " << trainer.log.size() << " steps logged, final total="
              << (trainer.log.empty() ? 0.0 : trainer.log.back().total) << "\n";
    return 0;
}

// --- eval -----------------------------------------------------------------------

int cmd_eval(const std::vector<std::string>& args) {
    CLI::App app{"evaluate a checkpoint on a dataset"};
    std::string config_path, checkpoint, dataset, out = "eval_out", vectors_path;
    bool corrupt_sweep_flag = false;
    std::uint64_t corrupt_seed = 7;
    app.add_option("--config", config_path, "training config JSON (model + rig)")->required();
    app.add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    app.add_option("--dataset", dataset, "scene dataset directory (defaults to config's)");
    app.add_option("--out", out, "report directory");
    app.add_flag("--corrupt", corrupt_sweep_flag, "run the corruption sweep");
    app.add_option("--corrupt-seed", corrupt_seed);
    app.add_option("--vectors", vectors_path, "vector-map predictions JSON to score");
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;

    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config " + config_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("train config: malformed JSON: ") + e.what());
    }
    TrainConfig cfg = TrainConfig::from_json(j);
    if (!dataset.empty()) cfg.dataset_dir = dataset;

    Trainer<float> trainer(cfg);
    trainer.load_dataset();
    trainer.resume_from(checkpoint);

    EvalReport report = trainer.evaluate(trainer.scenes);
    if (corrupt_sweep_flag) {
        std::vector<CorruptionSpec> specs;
        for (auto kind : {CorruptionKind::brightness, CorruptionKind::camera_crash,
                          CorruptionKind::frame_lost, CorruptionKind::gaussian_noise})
            for (double sev : {0.0, 0.5, 1.0}) specs.push_back({kind, sev, corrupt_seed});
        report.corruption = corruption_sweep(specs, [&](const CorruptionSpec* spec) {
            return trainer.evaluate(trainer.scenes, spec).miou;
        });
    }
    if (!vectors_path.empty()) {
        std::ifstream vin(vectors_path);
        if (!vin) throw std::runtime_error("cannot open vectors " + vectors_path);
        nlohmann::json vj;
        vin >> vj;
        const auto preds = vector_predictions_from_json(vj);
        std::vector<VectorElement> gts;
        for (const auto& scene : trainer.scenes)
            gts.insert(gts.end(), scene.gt_vector.begin(), scene.gt_vector.end());
        report.vector_scores = average_precision(preds, gts);
    }

    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    report.write_csv((dir / "eval.csv").string());
    {
        std::ofstream o(dir / "eval.json");
        o << report.to_json().dump(2) << "\n";
    }
    write_manifest(dir, "eval", args, {{"checkpoint", checkpoint}, {"dataset", cfg.dataset_dir}},
                   tree_files(dir));
    std::cout << "eval: mIoU=" << report.miou << " (div=" << report.class_iou[0]
              << " ped=" << report.class_iou[1] << " bou=" << report.class_iou[2] << ")\n";
    for (const auto& row : report.corruption)
        std::cout << "  corruption " << row.kind << " sev=" << row.severity << " mIoU=" << row.miou
                  << "\n";
    return 0;
}

// --- augcheck -------------------------------------------------------------------

int cmd_augcheck(const std::vector<std::string>& args) {
    CLI::App app{"verify the bidirectional augmentation invariants on a dataset"};
    std::string dataset, out, aug_flags;
    std::uint64_t aug_seed = 0;
    app.add_option("--dataset", dataset, "scene dataset directory")->required();
    app.add_option("--out", out, "report directory (optional)");
    app.add_option("--aug", aug_flags, "check one spec, e.g. \"h,v,r\" (default: all 8)");
    app.add_option("--aug-seed", aug_seed, "also check sample_aug determinism for this seed");
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;

    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(dataset))
        if (e.is_directory() && fs::exists(e.path() / "scene.json")) dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("augcheck: no scenes in " + dataset);

    std::vector<AugSpec> specs;
    if (!aug_flags.empty()) {
        specs.push_back(parse_aug_flags(aug_flags));
    } else {
        for (int m = 0; m < 8; ++m)
            specs.push_back(AugSpec{(m & 1) != 0, (m & 2) != 0, (m & 4) != 0, 0});
    }
    if (aug_seed != 0) {
        const AugSpec a = sample_aug(aug_seed), b = sample_aug(aug_seed);
        if (a.hflip != b.hflip || a.vflip != b.vflip || a.rot180 != b.rot180)
            throw std::runtime_error("augcheck: sample_aug is not deterministic");
    }

    std::size_t checked = 0, failures = 0;
    for (const auto& d : dirs) {
        const Scene scene = load_scene(d);
        const MapRaster fg = binarize_bev(scene.gt_semantic);
        for (const AugSpec& spec : specs) {
            ++checked;
            const MapRaster round = apply_backward(spec, apply_forward(spec, scene.gt_semantic));
            if (round.data != scene.gt_semantic.data) ++failures;
            const MapRaster tex_round =
                apply_backward(spec, apply_forward(spec, scene.ground_texture));
            if (tex_round.data != scene.ground_texture.data) ++failures;
            if (iou(apply_forward(spec, fg), apply_forward(spec, fg)) != 1.0) ++failures;
        }
    }
    std::cout << "augcheck: " << checked << " spec/scene pairs, " << failures << " failures -> "
              << (failures == 0 ? "PASS" : "FAIL") << "\n";
    if (!out.empty()) {
        const fs::path dir = resolve_out(out);
        fs::create_directories(dir);
        nlohmann::json j = {{"checked", checked}, {"failures", failures}, {"pass", failures == 0}};
        std::ofstream o(dir / "augcheck.json");
        o << j.dump(2) << "\n";
        write_manifest(dir, "augcheck", args, j, tree_files(dir));
    }
    return failures == 0 ? 0 : 1;
}

// --- rig ------------------------------------------------------------------------

int cmd_rig(const std::vector<std::string>& args) {
    CLI::App app{"write a rig preset to a JSON file"};
    std::string preset = "ring6", out, grid_preset = "standard";
    app.add_option("--preset", preset, "front|stereo|ring6|matched|matched1|matched2");
    app.add_option("--grid-preset", grid_preset, "standard|reduced (for matched rigs)");
    app.add_option("--out", out, "output rig JSON")->required();
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;
    const GridSpec grid =
        grid_preset == "reduced" ? ModelConfig::reduced().grid : GridSpec::standard();
    const fs::path path = resolve_out(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_rig(rig_preset(preset, grid), path.string());
    std::cout << "rig: wrote preset " << preset << " to " << path.string() << "\n";
    return 0;
}

// --- replay ---------------------------------------------------------------------

int cmd_replay(const std::vector<std::string>& args) {
    CLI::App app{"re-run a command from its manifest"};
    std::string manifest_path;
    app.add_option("--manifest", manifest_path, "manifest.json of a previous run")->required();
    if (const int rc = parse_cli(app, args); rc >= 0) return rc;
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest " + manifest_path);
    nlohmann::json j;
    in >> j;
    std::vector<std::string> stored;
    stored.push_back(j.at("command").get<std::string>());
    for (const auto& a : j.at("args")) stored.push_back(a.get<std::string>());
    std::cout << "replay: " << stored[0] << "\n";
    return dispatch(stored);
}

int dispatch(const std::vector<std::string>& args) {
    if (args.empty()) return 1;
    const std::string cmd = args[0];
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    if (cmd == "dataset") return cmd_dataset(rest);
    if (cmd == "render") return cmd_render(rest);
    if (cmd == "roundtrip") return cmd_roundtrip(rest);
    if (cmd == "train") return cmd_train(rest);
    if (cmd == "eval") return cmd_eval(rest);
    if (cmd == "augcheck") return cmd_augcheck(rest);
    if (cmd == "rig") return cmd_rig(rest);
    if (cmd == "replay") return cmd_replay(rest);
    throw std::invalid_argument("unknown subcommand: " + cmd);
}

void print_usage() {
    std::cout << "bevkit " << kVersion
              << " - camera-parameter-decoupled BEV mapping toolkit\n"
                 "usage: bevkit <subcommand> [options]\n\n"
                 "subcommands:\n"
                 "  dataset    generate seeded synthetic scene archives\n"
                 "  render     render perspective views of a scene\n"
                 "  roundtrip  verify the render/warp geometric identity\n"
                 "  train      train the triadic model\n"
                 "  eval       evaluate a checkpoint (IoU, CVML, corruption sweep, AP)\n"
                 "  augcheck   verify bidirectional augmentation invariants\n"
                 "  rig        write a rig preset to JSON\n"
                 "  replay     re-run a command from its manifest\n\n"
                 "run 'bevkit <subcommand> --help' for options;\n"
                 "BEVKIT_OUT_ROOT prefixes relative output paths.\n";
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "-h") {
        print_usage();
        return 0;
    }
    try {
        return dispatch(args);
    } catch (const std::invalid_argument& e) {
        std::cerr << "bevkit: validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "bevkit: error: " << e.what() << "\n";
        return 2;
    }
}
