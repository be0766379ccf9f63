#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevkit/augment.hpp"
#include "bevkit/crossview.hpp"
#include "bevkit/evaluation.hpp"
#include "bevkit/network.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/optim.hpp"
#include "bevkit/synthworld.hpp"

namespace bevkit {

// Weights of the composite objective. The semantic preset keeps the
// joint-learning weight at a tenth of the map weight; setting alpha1 through
// set_alpha1 maintains that relationship.
struct LossWeights {
    double alpha1 = 1.0, alpha2 = 1.0, alpha3 = 0.1;

    static LossWeights semantic() { return {1.0, 1.0, 0.1}; }
    static LossWeights vectorized() { return {10.0, 10.0, 1.0}; }

    void set_alpha1(double v) {
        alpha1 = v;
        alpha3 = 0.1 * v;
    }
    void validate() const {
        if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0)
            throw std::invalid_argument("LossWeights: weights must be nonnegative");
    }
};

struct LossReport {
    double loss_hd = 0.0, loss_pv = 0.0, loss_jl = 0.0, total = 0.0;
    std::int64_t step = 0;
    double lr = 0.0;
};

// total = a1*hd + a2*pv + a3*jl (the downstream task term is fixed at zero;
// the decoder-feature hook plus backward augmentation is the integration
// point for external task heads).
template <typename T>
std::pair<Tensor<T>, LossReport> total_loss(const Tensor<T>& loss_hd, const Tensor<T>& loss_pv,
                                            const Tensor<T>& loss_jl, const LossWeights& w) {
    w.validate();
    auto check = [](const Tensor<T>& t, const char* name) {
        if (!std::isfinite(static_cast<double>(t->scalar())))
            throw std::runtime_error(std::string("total_loss: non-finite component ") + name);
    };
    check(loss_hd, "loss_hd");
    check(loss_pv, "loss_pv");
    check(loss_jl, "loss_jl");
    auto total = add(add(scale(loss_hd, static_cast<T>(w.alpha1)),
                         scale(loss_pv, static_cast<T>(w.alpha2))),
                     scale(loss_jl, static_cast<T>(w.alpha3)));
    LossReport rep;
    rep.loss_hd = static_cast<double>(loss_hd->scalar());
    rep.loss_pv = static_cast<double>(loss_pv->scalar());
    rep.loss_jl = static_cast<double>(loss_jl->scalar());
    // the logged total is composed in double so the weighted-sum identity
    // holds at report precision regardless of the compute type T
    rep.total = w.alpha1 * rep.loss_hd + w.alpha2 * rep.loss_pv + w.alpha3 * rep.loss_jl;
    return {total, rep};
}

// --- training configuration -----------------------------------------------------

struct TrainConfig {
    ModelConfig model = ModelConfig::reduced();
    std::string dataset_dir;
    std::string rig = "preset:ring6";  // path or preset:<name>
    LossWeights weights = LossWeights::semantic();
    OptRule rule = OptRule::adamw;
    LrSchedule schedule = LrSchedule::cosine;
    double lr0 = 2.5e-4, lr_min = 1e-5, weight_decay = 0.01;
    int t_max = 500;
    int steps = 500;
    int batch = 4;
    std::uint64_t seed = 1;
    int checkpoint_every = 100;
    bool augment_enabled = true;
    AugProbs aug_probs;
    bool cvml_stop_pv_grad = false;
    std::string out_dir = "train_out";
    int threads = 1;

    nlohmann::json to_json() const {
        return {{"model", model.to_json()},
                {"dataset", dataset_dir},
                {"rig", rig},
                {"weights", {{"alpha1", weights.alpha1}, {"alpha2", weights.alpha2}, {"alpha3", weights.alpha3}}},
                {"optimizer",
                 {{"rule", rule == OptRule::adamw ? "adamw" : "sgd_momentum"},
                  {"schedule", schedule == LrSchedule::cosine ? "cosine" : "constant"},
                  {"lr0", lr0},
                  {"lr_min", lr_min},
                  {"t_max", t_max},
                  {"weight_decay", weight_decay}}},
                {"steps", steps},
                {"batch", batch},
                {"seed", seed},
                {"checkpoint_every", checkpoint_every},
                {"augment", {{"enabled", augment_enabled},
                             {"hflip", aug_probs.hflip},
                             {"vflip", aug_probs.vflip},
                             {"rot180", aug_probs.rot180}}},
                {"cvml_stop_pv_grad", cvml_stop_pv_grad},
                {"out_dir", out_dir},
                {"threads", threads}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        auto need = [&](const char* field) -> const nlohmann::json& {
            if (!j.contains(field))
                throw std::invalid_argument(std::string("train config: missing field .") + field);
            return j.at(field);
        };
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
        c.dataset_dir = need("dataset").get<std::string>();
        if (j.contains("rig")) c.rig = j.at("rig").get<std::string>();
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            if (w.is_string()) {
                const std::string p = w.get<std::string>();
                if (p == "semantic") c.weights = LossWeights::semantic();
                else if (p == "vectorized") c.weights = LossWeights::vectorized();
                else throw std::invalid_argument("train config: .weights preset must be semantic|vectorized");
            } else {
                c.weights.alpha1 = w.value("alpha1", 1.0);
                c.weights.alpha2 = w.value("alpha2", 1.0);
                c.weights.alpha3 = w.value("alpha3", 0.1);
            }
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            const std::string rule = o.value("rule", "adamw");
            if (rule == "adamw") c.rule = OptRule::adamw;
            else if (rule == "sgd_momentum") c.rule = OptRule::sgd_momentum;
            else throw std::invalid_argument("train config: .optimizer.rule must be adamw|sgd_momentum");
            const std::string sched = o.value("schedule", "cosine");
            if (sched == "cosine") c.schedule = LrSchedule::cosine;
            else if (sched == "constant") c.schedule = LrSchedule::constant;
            else throw std::invalid_argument("train config: .optimizer.schedule must be cosine|constant");
            c.lr0 = o.value("lr0", 2.5e-4);
            c.lr_min = o.value("lr_min", 1e-5);
            c.t_max = o.value("t_max", 500);
            c.weight_decay = o.value("weight_decay", 0.01);
        }
        c.steps = j.value("steps", 500);
        c.batch = j.value("batch", 4);
        c.seed = j.value("seed", std::uint64_t{1});
        c.checkpoint_every = j.value("checkpoint_every", 100);
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            c.augment_enabled = a.value("enabled", true);
            c.aug_probs.hflip = a.value("hflip", 0.5);
            c.aug_probs.vflip = a.value("vflip", 0.5);
            c.aug_probs.rot180 = a.value("rot180", 0.5);
        }
        c.cvml_stop_pv_grad = j.value("cvml_stop_pv_grad", false);
        c.out_dir = j.value("out_dir", std::string("train_out"));
        c.threads = j.value("threads", 1);
        if (c.steps <= 0 || c.batch <= 0)
            throw std::invalid_argument("train config: .steps and .batch must be positive");
        return c;
    }
};

inline CameraRig resolve_rig(const std::string& spec, const GridSpec& grid) {
    if (spec.rfind("preset:", 0) == 0) return rig_preset(spec.substr(7), grid);
    return load_rig(spec);
}

// Deterministic dataset order: a fresh seeded shuffle per epoch, globally
// indexed so any step's batch is a pure function of (seed, step).
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch,
                                              std::size_t n_scenes) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> perm;
    for (int k = 0; k < batch; ++k) {
        const std::int64_t g = step * batch + k;
        const std::int64_t epoch = g / static_cast<std::int64_t>(n_scenes);
        if (epoch != cached_epoch) {
            perm.resize(n_scenes);
            for (std::size_t i = 0; i < n_scenes; ++i) perm[i] = i;
            auto rng = make_rng(seed, "train.order", static_cast<std::uint64_t>(epoch));
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[g % static_cast<std::int64_t>(n_scenes)]);
    }
    return out;
}

// One scene prepared for the network: rendered views, perspective road
// ground truth, OSM raster, and semantic target.
struct TrainSample {
    std::vector<Image> views;
    std::vector<Image> pv_road_gt;  // rendered binarized foreground per camera
    MapRaster osm;
    MapRaster gt_semantic;
};

inline TrainSample prepare_sample(const Scene& scene, const CameraRig& rig, const ModelConfig& cfg,
                                  int threads = 1) {
    TrainSample s;
    const std::pair<int, int> size{cfg.image_width, cfg.image_height};
    s.views = render_perspective(scene, rig, cfg.ipm_height, size, Sampling::bilinear, threads);
    const MapRaster fg = binarize_bev(scene.gt_semantic);
    for (const auto& cam : rig.cameras)
        s.pv_road_gt.push_back(render_raster(fg, cam, cfg.ipm_height, size, Sampling::nearest,
                                             {0.0f}, threads));
    s.osm = rasterize_osm(scene.osm_centerlines, cfg.grid);
    s.gt_semantic = scene.gt_semantic;
    return s;
}

template <typename T>
std::vector<int> semantic_target(const MapRaster& gt) {
    std::vector<int> out(gt.data.size());
    for (std::size_t i = 0; i < gt.data.size(); ++i) out[i] = static_cast<int>(gt.data[i]);
    return out;
}

// Per-sample composite loss components.
template <typename T>
struct SampleLosses {
    Tensor<T> hd, pv, jl;
    bool cvml_empty_mask = false;
};

template <typename T>
SampleLosses<T> sample_losses(Model<T>& model, const ForwardResult<T>& fw, const TrainSample& sample,
                              const std::optional<AugSpec>& aug, bool cvml_stop_pv_grad) {
    SampleLosses<T> out;
    MapRaster gt = sample.gt_semantic;
    if (aug) gt = apply_forward(*aug, gt);
    out.hd = cross_entropy(fw.bev_logits, semantic_target<T>(gt));

    Tensor<T> pv_sum;
    for (std::size_t n = 0; n < fw.pv_logits.size(); ++n) {
        std::vector<T> target(sample.pv_road_gt[n].data.size());
        for (std::size_t i = 0; i < target.size(); ++i)
            target[i] = static_cast<T>(sample.pv_road_gt[n].data[i]);
        auto l = bce_with_logits(fw.pv_logits[n], target);
        pv_sum = pv_sum ? add(pv_sum, l) : l;
    }
    out.pv = scale(pv_sum, static_cast<T>(1.0 / fw.pv_logits.size()));

    Tensor<T> pv_map = fw.pv_bev_map;
    if (cvml_stop_pv_grad) pv_map = make_tensor<T>(pv_map->shape, std::vector<T>(pv_map->data));
    auto cvml = cvml_loss(pv_map, model.foreground_prob(fw.bev_logits), fw.vis_mask);
    out.jl = cvml.loss;
    out.cvml_empty_mask = cvml.empty_mask;
    return out;
}

// --- trainer ---------------------------------------------------------------------

template <typename T = float>
class Trainer {
public:
    TrainConfig cfg;
    Model<T> model;
    Optimizer<T> opt;
    CameraRig rig;
    ModelLuts luts;
    std::vector<Scene> scenes;
    std::vector<LossReport> log;

    explicit Trainer(const TrainConfig& config)
        : cfg(config), model(config.model, config.seed), rig(resolve_rig(config.rig, config.model.grid)) {
        opt.rule = cfg.rule;
        opt.schedule = cfg.schedule;
        opt.lr0 = cfg.lr0;
        opt.lr_min = cfg.lr_min;
        opt.t_max = cfg.t_max;
        opt.weight_decay = cfg.weight_decay;
        luts = ModelLuts::build(cfg.model, rig, cfg.threads);
    }

    void load_dataset() {
        namespace fs = std::filesystem;
        scenes.clear();
        if (!fs::is_directory(cfg.dataset_dir))
            throw std::runtime_error("train: dataset directory not found: " + cfg.dataset_dir);
        std::vector<std::string> dirs;
        for (const auto& e : fs::directory_iterator(cfg.dataset_dir))
            if (e.is_directory() && fs::exists(e.path() / "scene.json")) dirs.push_back(e.path().string());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) scenes.push_back(load_scene(d));
        if (scenes.empty()) throw std::runtime_error("train: no scenes found in " + cfg.dataset_dir);
    }

    const TrainSample& sample_for(std::size_t scene_idx) {
        auto it = sample_cache_.find(scene_idx);
        if (it != sample_cache_.end()) return it->second;
        NoGradGuard ng;
        auto [ins, ok] =
            sample_cache_.emplace(scene_idx, prepare_sample(scenes[scene_idx], rig, cfg.model, cfg.threads));
        return ins->second;
    }

    // Runs cfg.steps optimizer steps (resuming from opt.step_count when a
    // checkpoint was loaded). Aborts on sustained divergence.
    void train() {
        if (scenes.empty()) load_dataset();
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out_dir);
        model.training_mode = true;

        int diverged_run = 0;
        for (std::int64_t step = opt.step_count; step < cfg.steps; ++step) {
            model.store.zero_grads();
            const auto idx = batch_indices(cfg.seed, step, cfg.batch, scenes.size());

            Tensor<T> hd, pv, jl;
            for (int k = 0; k < cfg.batch; ++k) {
                const TrainSample& sample = sample_for(idx[k]);
                std::optional<AugSpec> aug;
                if (cfg.augment_enabled)
                    aug = sample_aug(mix64(cfg.seed ^ mix64(step * 131 + k)), cfg.aug_probs);
                auto fw = model.forward(sample.views, sample.osm, luts, aug, cfg.threads);
                auto losses = sample_losses(model, fw, sample, aug, cfg.cvml_stop_pv_grad);
                hd = hd ? add(hd, losses.hd) : losses.hd;
                pv = pv ? add(pv, losses.pv) : losses.pv;
                jl = jl ? add(jl, losses.jl) : losses.jl;
            }
            const T inv_b = static_cast<T>(1.0 / cfg.batch);
            auto [total, report] = total_loss(scale(hd, inv_b), scale(pv, inv_b), scale(jl, inv_b),
                                              cfg.weights);
            report.step = step;
            report.lr = opt.current_lr();
            backward(total);
            opt.step(model.store);
            log.push_back(report);

            diverged_run = report.total > 1e3 ? diverged_run + 1 : 0;
            if (diverged_run >= 50)
                throw std::runtime_error("train: diverged (total > 1e3 for 50 consecutive steps at step " +
                                         std::to_string(step) + ")");

            if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
                save_checkpoint(model.store, &opt,
                                (fs::path(cfg.out_dir) / "checkpoint.bkcp").string());
        }
        save_checkpoint(model.store, &opt, (fs::path(cfg.out_dir) / "checkpoint.bkcp").string());
        write_log((fs::path(cfg.out_dir) / "loss_log.csv").string());
    }

    void resume_from(const std::string& checkpoint_path) {
        load_checkpoint(model.store, &opt, checkpoint_path);
    }

    void write_log(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("train: cannot write " + path);
        out << "step,lr,loss_hd,loss_pv,loss_jl,total\n";
        out.precision(17);
        for (const auto& r : log)
            out << r.step << "," << r.lr << "," << r.loss_hd << "," << r.loss_pv << "," << r.loss_jl
                << "," << r.total << "\n";
    }

    // No-augmentation evaluation over a scene set: dataset-level IoU, mIoU
    // and the cross-view consistency report.
    EvalReport evaluate(const std::vector<Scene>& eval_scenes,
                        const CorruptionSpec* corruption = nullptr) {
        NoGradGuard ng;
        const bool was_training = model.training_mode;
        model.training_mode = false;
        SegAccumulator seg;
        double soft = 0.0, hard = 0.0;
        for (std::size_t si = 0; si < eval_scenes.size(); ++si) {
            TrainSample sample = prepare_sample(eval_scenes[si], rig, cfg.model, cfg.threads);
            if (corruption) sample.views = corrupt(sample.views, *corruption);
            auto fw = model.forward(sample.views, sample.osm, luts, std::nullopt, cfg.threads);
            const MapRaster pred = Model<T>::argmax_classes(fw.bev_logits, cfg.model.grid);
            seg.add(pred, sample.gt_semantic);

            MapRaster pv_bev(cfg.model.grid, 1, RasterKind::feature);
            for (std::size_t i = 0; i < pv_bev.data.size(); ++i)
                pv_bev.data[i] = static_cast<float>(fw.pv_bev_map->data[i]);
            const auto rep = cvml_report(pv_bev, binarize_bev(pred), fw.vis_mask);
            soft += rep.soft_l1;
            hard += rep.hard_l1;
        }
        model.training_mode = was_training;
        EvalReport report;
        report.class_iou = seg.class_iou();
        report.miou = seg.miou();
        if (!eval_scenes.empty()) {
            report.cvml_soft_l1 = soft / eval_scenes.size();
            report.cvml_hard_l1 = hard / eval_scenes.size();
        }
        return report;
    }

private:
    std::map<std::size_t, TrainSample> sample_cache_;
};

}  // namespace bevkit
