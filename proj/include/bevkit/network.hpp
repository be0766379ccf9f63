#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevkit/augment.hpp"
#include "bevkit/crossview.hpp"
#include "bevkit/ipm.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/optim.hpp"
#include "bevkit/raster.hpp"
#include "bevkit/ssm.hpp"
#include "bevkit/synthworld.hpp"

namespace bevkit {

inline constexpr int kStride = 32;  // five stride-2 stages in every trunk

struct ModelConfig {
    GridSpec grid = GridSpec::standard();
    int image_width = 352, image_height = 128;
    int feature_grid_divisor = 4;  // the low-res grid the perspective features warp onto
    std::vector<int> enc_channels = {32, 64, 96, 128, 160};
    int vm_depth = 2;
    int pv_channels = 64;
    int num_classes = 4;
    int state_dim = 8;
    int expansion = 2;
    double ipm_height = 0.0;  // hypothetical plane height (exposed, defaults to ground)

    // CPU desk-scale preset used by the smoke training and the full-model
    // gradient check.
    static ModelConfig reduced() {
        ModelConfig c;
        c.grid = GridSpec::make(-26.0, 26.0, -14.0, 14.0, 0.5);  // 104 x 56 cells
        c.image_width = 176;
        c.image_height = 64;
        c.enc_channels = {8, 12, 16, 20, 24};
        c.vm_depth = 1;
        c.pv_channels = 16;
        c.state_dim = 8;
        return c;
    }

    void validate() const {
        grid.validate();
        if (enc_channels.size() != 5)
            throw std::invalid_argument("ModelConfig: enc_channels must list 5 stages");
        for (int c : enc_channels)
            if (c <= 0) throw std::invalid_argument("ModelConfig: channels must be positive");
        if (image_width % 8 != 0 || image_height % 8 != 0)
            throw std::invalid_argument("ModelConfig: image size must be divisible by 8");
        if (num_classes < 2) throw std::invalid_argument("ModelConfig: need >= 2 classes");
        if (feature_grid_divisor < 1)
            throw std::invalid_argument("ModelConfig: feature_grid_divisor must be >= 1");
        feature_grid();  // must divide evenly
    }

    GridSpec feature_grid() const {
        return GridSpec::make(grid.x_min, grid.x_max, grid.y_min, grid.y_max,
                              grid.resolution * feature_grid_divisor);
    }
    std::pair<int, int> padded_dims() const {  // (H, W)
        auto round_up = [](int v) { return (v + kStride - 1) / kStride * kStride; };
        return {round_up(grid.height_cells()), round_up(grid.width_cells())};
    }
    std::pair<int, int> pv_feature_size() const {  // (w, h) at stride 8
        return {image_width / 8, image_height / 8};
    }

    nlohmann::json to_json() const {
        return {{"grid",
                 {{"x_min", grid.x_min},
                  {"x_max", grid.x_max},
                  {"y_min", grid.y_min},
                  {"y_max", grid.y_max},
                  {"resolution", grid.resolution}}},
                {"image_size", {image_width, image_height}},
                {"feature_grid_divisor", feature_grid_divisor},
                {"enc_channels", enc_channels},
                {"vm_depth", vm_depth},
                {"pv_channels", pv_channels},
                {"num_classes", num_classes},
                {"state_dim", state_dim},
                {"expansion", expansion},
                {"ipm_height", ipm_height}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            c.grid = GridSpec::make(g.at("x_min"), g.at("x_max"), g.at("y_min"), g.at("y_max"),
                                    g.at("resolution"));
        }
        if (j.contains("image_size")) {
            c.image_width = j.at("image_size")[0];
            c.image_height = j.at("image_size")[1];
        }
        if (j.contains("feature_grid_divisor")) c.feature_grid_divisor = j.at("feature_grid_divisor");
        if (j.contains("enc_channels")) c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
        if (j.contains("vm_depth")) c.vm_depth = j.at("vm_depth");
        if (j.contains("pv_channels")) c.pv_channels = j.at("pv_channels");
        if (j.contains("num_classes")) c.num_classes = j.at("num_classes");
        if (j.contains("state_dim")) c.state_dim = j.at("state_dim");
        if (j.contains("expansion")) c.expansion = j.at("expansion");
        if (j.contains("ipm_height")) c.ipm_height = j.at("ipm_height");
        c.validate();
        return c;
    }
};

// Everything the forward pass needs from a camera rig, precomputed once. The
// network itself never sees CameraRig values: swap rigs behind identical LUTs
// and every output is bitwise unchanged.
struct ModelLuts {
    IpmLut image_lut;    // full grid <- camera images
    IpmLut feature_lut;  // quarter grid <- stride-8 perspective features
    IpmLut pvmap_lut;    // full grid <- perspective road maps
    std::shared_ptr<const WarpPlan> image_plan;    // bilinear, mean
    std::shared_ptr<const WarpPlan> feature_plan;  // bilinear, mean
    std::shared_ptr<const WarpPlan> pvmap_plan;    // bilinear, mean
    MapRaster vis_mask;

    static ModelLuts build(const ModelConfig& cfg, const CameraRig& rig, int threads = 1) {
        ModelLuts l;
        const std::pair<int, int> img_size{cfg.image_width, cfg.image_height};
        l.image_lut = build_ipm_lut(cfg.grid, rig, cfg.ipm_height, img_size, threads);
        l.feature_lut =
            build_ipm_lut(cfg.feature_grid(), rig, cfg.ipm_height, cfg.pv_feature_size(), threads);
        l.pvmap_lut = l.image_lut;
        l.image_plan = std::make_shared<const WarpPlan>(
            make_warp_plan(l.image_lut, Sampling::bilinear, Merge::mean));
        l.feature_plan = std::make_shared<const WarpPlan>(
            make_warp_plan(l.feature_lut, Sampling::bilinear, Merge::mean));
        l.pvmap_plan = l.image_plan;
        l.vis_mask = visibility_mask(l.image_lut);
        return l;
    }
};

template <typename T>
struct ForwardResult {
    Tensor<T> bev_logits;             // (num_classes, H, W), augmented space when aug is set
    std::vector<Tensor<T>> pv_logits; // per camera (1, h, w)
    std::vector<Tensor<T>> pv_prob;   // sigmoid of the above
    Tensor<T> pv_bev_map;             // perspective road map warped to BEV (1, H, W)
    Tensor<T> bottleneck;             // principal encoder output
    Tensor<T> prior_feat;             // prior branch output
    Tensor<T> fused_shallow;          // add+CB of bottleneck and prior
    Tensor<T> merged;                 // decoder input after triple merging
    Tensor<T> pv_bev_feat;            // warped perspective features (quarter grid)
    Tensor<T> decoder_feat;           // BEV feature hook for downstream decoders
    MapRaster ipm_image;              // warped (and augmented) network input
    MapRaster vis_mask;               // augmented visibility mask
    std::optional<AugSpec> aug;
};

template <typename T>
class Model {
public:
    ModelConfig cfg;
    ParamStore<T> store;
    bool training_mode = true;

    Model(const ModelConfig& config, std::uint64_t seed) : cfg(config), store(seed) {
        cfg.validate();
        build_weights();
    }

    // --- principal branch ------------------------------------------------------

    // Expects the padded IPM image (multiple-of-32 spatial dims); returns the
    // stride-32 bottleneck plus the per-stage skip features.
    std::pair<Tensor<T>, std::vector<Tensor<T>>> principal_encode(const Tensor<T>& ipm_image) {
        const auto [ph, pw] = cfg.padded_dims();
        if (ipm_image->shape.size() != 3 || ipm_image->shape[1] != ph || ipm_image->shape[2] != pw)
            throw std::invalid_argument(
                "principal_encode: input must be padded to " + std::to_string(ph) + "x" +
                std::to_string(pw) + " (multiple of 32)");
        std::vector<Tensor<T>> skips;
        Tensor<T> x = ipm_image;
        for (int s = 0; s < 5; ++s) {
            x = conv2d(x, enc_down_[s].w, enc_down_[s].b, 2, 1);
            x = silu(x);
            x = layer_norm(x, enc_ln_[s].gamma, enc_ln_[s].beta, 0);
            x = enc_vm_[s].forward(x);
            if (s < 4) skips.push_back(x);
        }
        return {x, skips};
    }

    std::pair<Tensor<T>, Tensor<T>> principal_decode(const Tensor<T>& merged,
                                                     const std::vector<Tensor<T>>& skips) {
        if (skips.size() != 4) throw std::invalid_argument("principal_decode: need 4 skip stages");
        Tensor<T> x = merged;
        for (int s = 3; s >= 0; --s) {
            x = upsample_nearest2(x);
            if (x->shape[1] != skips[s]->shape[1] || x->shape[2] != skips[s]->shape[2])
                throw std::invalid_argument("principal_decode: skip shape mismatch at stage " +
                                            std::to_string(s));
            x = concat_channels<T>({x, skips[s]});
            x = conv2d(x, dec_fuse_[3 - s].w, dec_fuse_[3 - s].b, 1, 0);
            x = silu(x);
            x = layer_norm(x, dec_ln_[3 - s].gamma, dec_ln_[3 - s].beta, 0);
            x = dec_vm_[3 - s].forward(x);
        }
        const Tensor<T> decoder_feat = x;  // stride 2 over the padded grid
        Tensor<T> y = upsample_nearest2(x);
        y = silu(conv2d(y, head_mid_.w, head_mid_.b, 1, 1));
        y = conv2d(y, head_out_.w, head_out_.b, 1, 0);
        // crop the padding back off
        const auto [ph, pw] = cfg.padded_dims();
        const int hc = cfg.grid.height_cells(), wc = cfg.grid.width_cells();
        y = crop2d(y, (pw - wc) / 2, (ph - hc) / 2, hc, wc);
        return {decoder_feat, y};
    }

    // --- dense perspective branch ----------------------------------------------

    // Shared-weight factorized-conv encoder-decoder, one camera at a time.
    std::pair<Tensor<T>, Tensor<T>> perspective_branch_single(const Tensor<T>& image) {
        if (image->shape != std::vector<int>{3, cfg.image_height, cfg.image_width})
            throw std::invalid_argument("perspective_branch: image shape mismatch");
        Tensor<T> x = image;
        for (int s = 0; s < 3; ++s) {
            x = conv2d(x, pv_down_[s].w, pv_down_[s].b, 2, 1);
            x = silu(x);
            for (int u = 0; u < static_cast<int>(pv_units_[s].size()); ++u)
                x = non_bt_1d(x, pv_units_[s][u]);
        }
        const Tensor<T> features = x;  // stride 8
        // road-map decoder
        Tensor<T> m = silu(conv2d(x, pv_up1_.w, pv_up1_.b, 1, 0));
        m = upsample_nearest2(m);
        m = silu(conv2d(m, pv_up2_.w, pv_up2_.b, 1, 1));
        m = upsample_nearest2(m);
        m = silu(conv2d(m, pv_up3_.w, pv_up3_.b, 1, 1));
        m = upsample_nearest2(m);
        m = conv2d(m, pv_head_.w, pv_head_.b, 1, 0);
        return {features, m};
    }

    // --- sparse prior branch -----------------------------------------------------

    Tensor<T> prior_encode(const Tensor<T>& osm) {
        if (osm->shape.size() != 3 || osm->shape[0] != 1)
            throw std::invalid_argument("prior_encode: input must be (1,H,W)");
        Tensor<T> x = pad_to_grid(osm);
        // three k4 s2 p1 stages, then batch norm
        for (int s = 0; s < 3; ++s) x = relu(conv2d(x, prior_down_[s].w, prior_down_[s].b, 2, 1));
        x = batch_norm(x, prior_bn1_.gamma, prior_bn1_.beta, prior_bn1_mean_, prior_bn1_var_,
                       training_mode);
        // two more k4 s2 p1 stages, a k3 s1 p1 refinement, then batch norm
        for (int s = 3; s < 5; ++s) x = relu(conv2d(x, prior_down_[s].w, prior_down_[s].b, 2, 1));
        x = relu(conv2d(x, prior_refine_.w, prior_refine_.b, 1, 1));
        x = batch_norm(x, prior_bn2_.gamma, prior_bn2_.beta, prior_bn2_mean_, prior_bn2_var_,
                       training_mode);
        return x;
    }

    // --- triple-enhanced merging -------------------------------------------------

    std::pair<Tensor<T>, Tensor<T>> tri_merge(const Tensor<T>& bottleneck, const Tensor<T>& prior,
                                              const Tensor<T>& pv_bev) {
        if (bottleneck->shape != prior->shape)
            throw std::invalid_argument("tri_merge: bottleneck/prior shape mismatch");
        auto cb = [&](const Tensor<T>& v, const ConvLayer& conv, const NormPair& ln) {
            return layer_norm(silu(conv2d(v, conv.w, conv.b, 1, 0)), ln.gamma, ln.beta, 0);
        };
        const Tensor<T> shallow = cb(add(bottleneck, prior), merge_cb1_, merge_cb1_ln_);
        // pool the quarter-grid perspective features under the bottleneck size,
        // project, then zero-pad up to exact shape
        Tensor<T> pv = pv_bev;
        const int th = bottleneck->shape[1], tw = bottleneck->shape[2];
        while ((pv->shape[1] > th || pv->shape[2] > tw) && pv->shape[1] >= 2 && pv->shape[2] >= 2)
            pv = avg_pool2d(pv, 2);
        if (pv->shape[1] > th || pv->shape[2] > tw) {
            const int ch = std::min(pv->shape[1], th), cw = std::min(pv->shape[2], tw);
            pv = crop2d(pv, (pv->shape[2] - cw) / 2, (pv->shape[1] - ch) / 2, ch, cw);
        }
        pv = silu(conv2d(pv, merge_pv_.w, merge_pv_.b, 1, 1));
        const int dh = th - pv->shape[1], dw = tw - pv->shape[2];
        if (dh > 0 || dw > 0) pv = pad2d(pv, dw / 2, dw - dw / 2, dh / 2, dh - dh / 2);
        const Tensor<T> merged = cb(concat_channels<T>({shallow, pv}), merge_cb2_, merge_cb2_ln_);
        return {shallow, merged};
    }

    // --- full pipeline -------------------------------------------------------------

    ForwardResult<T> forward(const std::vector<Image>& images, const MapRaster& osm,
                             const ModelLuts& luts, const std::optional<AugSpec>& aug = {},
                             int threads = 1) {
        if (images.size() != luts.image_lut.payload_sizes.size())
            throw std::invalid_argument("forward: camera count mismatch with LUTs");
        if (!(osm.grid == cfg.grid)) throw std::invalid_argument("forward: OSM raster grid mismatch");

        ForwardResult<T> res;
        res.aug = aug;

        // IPM image (plain data; gradients never flow into sensor pixels)
        MapRaster ipm_raster = apply_warp_plan(images, *luts.image_plan, RasterKind::image, threads);
        MapRaster osm_in = osm;
        res.vis_mask = luts.vis_mask;
        if (aug) {
            ipm_raster = apply_forward(*aug, ipm_raster);
            osm_in = apply_forward(*aug, osm_in);
            res.vis_mask = apply_forward(*aug, res.vis_mask);
        }
        res.ipm_image = ipm_raster;

        auto [f_en, skips] = principal_encode(pad_to_grid(to_tensor(ipm_raster)));
        res.bottleneck = f_en;

        std::vector<Tensor<T>> pv_feats;
        for (const auto& img : images) {
            auto [feat, logit] = perspective_branch_single(to_tensor(img));
            pv_feats.push_back(feat);
            res.pv_logits.push_back(logit);
            res.pv_prob.push_back(sigmoid(logit));
        }

        Tensor<T> pv_bev = warp_to_bev_tensor(pv_feats, luts.feature_plan);
        Tensor<T> pv_map_bev = warp_to_bev_tensor(res.pv_prob, luts.pvmap_plan);
        if (aug) {
            pv_bev = apply_forward(*aug, pv_bev);
            pv_map_bev = apply_forward(*aug, pv_map_bev);
        }
        res.pv_bev_feat = pv_bev;
        res.pv_bev_map = pv_map_bev;

        res.prior_feat = prior_encode(to_tensor(osm_in));
        auto [shallow, merged] = tri_merge(f_en, res.prior_feat, pv_bev);
        res.fused_shallow = shallow;
        res.merged = merged;

        auto [f_de, logits] = principal_decode(merged, skips);
        res.decoder_feat = f_de;
        res.bev_logits = logits;
        return res;
    }

    // foreground probability map (1 - P(background)) from class logits
    Tensor<T> foreground_prob(const Tensor<T>& logits) {
        auto probs = softmax_channels(logits);
        const int hc = logits->shape[1], wc = logits->shape[2];
        auto idx = std::make_shared<std::vector<std::uint32_t>>(
            static_cast<std::size_t>(hc) * wc);
        for (std::size_t i = 0; i < idx->size(); ++i) (*idx)[i] = static_cast<std::uint32_t>(i);
        auto background = gather(probs, idx, {1, hc, wc});
        return add_scalar(scale(background, T(-1)), T(1));
    }

    static MapRaster argmax_classes(const Tensor<T>& logits, const GridSpec& grid) {
        MapRaster out(grid, 1, RasterKind::semantic, 0.0f);
        const int c = logits->shape[0];
        const std::size_t plane = out.data.size();
        for (std::size_t i = 0; i < plane; ++i) {
            int best = 0;
            T hi = logits->data[i];
            for (int k = 1; k < c; ++k) {
                const T v = logits->data[k * plane + i];
                if (v > hi) {
                    hi = v;
                    best = k;
                }
            }
            out.data[i] = static_cast<float>(best);
        }
        return out;
    }

    Tensor<T> to_tensor(const MapRaster& r) const {
        auto t = make_tensor<T>({r.channels, r.height(), r.width()});
        for (std::size_t i = 0; i < r.data.size(); ++i) t->data[i] = static_cast<T>(r.data[i]);
        return t;
    }
    Tensor<T> to_tensor(const Image& img) const {
        auto t = make_tensor<T>({img.channels, img.height, img.width});
        for (std::size_t i = 0; i < img.data.size(); ++i) t->data[i] = static_cast<T>(img.data[i]);
        return t;
    }

private:
    struct ConvLayer {
        Tensor<T> w, b;
    };
    struct NormPair {
        Tensor<T> gamma, beta;
    };
    struct NonBt1dUnit {
        ConvLayer c31, c13;
        NormPair bn;
        Tensor<T> bn_mean, bn_var;
    };

    Tensor<T> pad_to_grid(const Tensor<T>& x) {
        const auto [ph, pw] = cfg.padded_dims();
        const int dh = ph - x->shape[1], dw = pw - x->shape[2];
        if (dh == 0 && dw == 0) return x;
        return pad2d(x, dw / 2, dw - dw / 2, dh / 2, dh - dh / 2);
    }

    // factorized 3x1/1x3 residual unit; smooth activations keep the branch
    // finite-difference checkable over the constant horizon regions
    Tensor<T> non_bt_1d(const Tensor<T>& x, const NonBt1dUnit& u) {
        Tensor<T> h = silu(conv2d(pad2d(x, 0, 0, 1, 1), u.c31.w, u.c31.b, 1, 0));
        h = conv2d(pad2d(h, 1, 1, 0, 0), u.c13.w, u.c13.b, 1, 0);
        h = batch_norm(h, u.bn.gamma, u.bn.beta, u.bn_mean, u.bn_var, training_mode);
        return silu(add(x, h));
    }

    ConvLayer make_conv(const std::string& path, int out_c, int in_c, int kh, int kw) {
        // bias gets the same fan-in init as the weight; zero biases would park
        // empty-input regions exactly on relu kinks and give layer norm
        // zero-variance inputs
        const std::size_t fan_in = static_cast<std::size_t>(in_c) * kh * kw;
        return {store.weight(path + ".w", {out_c, in_c, kh, kw}, fan_in),
                store.weight(path + ".b", {out_c}, fan_in)};
    }
    NormPair make_norm(const std::string& path, int c) {
        return {store.ones(path + ".gamma", {c}), store.zeros(path + ".beta", {c})};
    }
    NonBt1dUnit make_nb1d(const std::string& path, int c) {
        NonBt1dUnit u;
        u.c31 = make_conv(path + ".c31", c, c, 3, 1);
        u.c13 = make_conv(path + ".c13", c, c, 1, 3);
        u.bn = make_norm(path + ".bn", c);
        u.bn_mean = store.buffer(path + ".bn.running_mean", {c}, T(0));
        u.bn_var = store.buffer(path + ".bn.running_var", {c}, T(1));
        return u;
    }

    void build_weights() {
        const auto& ch = cfg.enc_channels;
        // principal encoder: 5 stride-2 stages of conv + VM blocks
        int in_c = 3;
        for (int s = 0; s < 5; ++s) {
            const std::string p = "principal.enc" + std::to_string(s);
            enc_down_[s] = make_conv(p + ".down", ch[s], in_c, 4, 4);
            enc_ln_[s] = make_norm(p + ".ln", ch[s]);
            enc_vm_.push_back(VmBlock<T>::create(store, p + ".vm", ch[s], cfg.vm_depth,
                                                 cfg.expansion, cfg.state_dim));
            in_c = ch[s];
        }
        // decoder: 4 upsampling stages with skip fusion
        for (int s = 3; s >= 0; --s) {
            const std::string p = "principal.dec" + std::to_string(s);
            const int up_in = (s == 3 ? ch[4] : ch[s + 1]) + ch[s];
            dec_fuse_[3 - s] = make_conv(p + ".fuse", ch[s], up_in, 1, 1);
            dec_ln_[3 - s] = make_norm(p + ".ln", ch[s]);
            dec_vm_.push_back(VmBlock<T>::create(store, p + ".vm", ch[s], cfg.vm_depth,
                                                 cfg.expansion, cfg.state_dim));
        }
        head_mid_ = make_conv("principal.head.mid", ch[0], ch[0], 3, 3);
        head_out_ = make_conv("principal.head.out", cfg.num_classes, ch[0], 1, 1);

        // perspective branch (shared across cameras)
        const int pc = cfg.pv_channels;
        const int pv_ch[3] = {std::max(4, pc / 4), std::max(8, pc / 2), pc};
        int pin = 3;
        for (int s = 0; s < 3; ++s) {
            pv_down_[s] = make_conv("pv.down" + std::to_string(s), pv_ch[s], pin, 3, 3);
            const int units = s == 0 ? 1 : 2;
            for (int u = 0; u < units; ++u)
                pv_units_[s].push_back(
                    make_nb1d("pv.stage" + std::to_string(s) + ".nb" + std::to_string(u), pv_ch[s]));
            pin = pv_ch[s];
        }
        pv_up1_ = make_conv("pv.dec.up1", pv_ch[1], pc, 1, 1);
        pv_up2_ = make_conv("pv.dec.up2", pv_ch[0], pv_ch[1], 3, 3);
        pv_up3_ = make_conv("pv.dec.up3", pv_ch[0], pv_ch[0], 3, 3);
        pv_head_ = make_conv("pv.dec.head", 1, pv_ch[0], 1, 1);

        // sparse prior branch: 3x(C421+ReLU)+BN, 2x(C421+ReLU)+C311+ReLU+BN
        int oin = 1;
        for (int s = 0; s < 5; ++s) {
            prior_down_[s] = make_conv("prior.down" + std::to_string(s), ch[s], oin, 4, 4);
            oin = ch[s];
        }
        prior_refine_ = make_conv("prior.refine", ch[4], ch[4], 3, 3);
        prior_bn1_ = make_norm("prior.bn1", ch[2]);
        prior_bn1_mean_ = store.buffer("prior.bn1.running_mean", {ch[2]}, T(0));
        prior_bn1_var_ = store.buffer("prior.bn1.running_var", {ch[2]}, T(1));
        prior_bn2_ = make_norm("prior.bn2", ch[4]);
        prior_bn2_mean_ = store.buffer("prior.bn2.running_mean", {ch[4]}, T(0));
        prior_bn2_var_ = store.buffer("prior.bn2.running_var", {ch[4]}, T(1));

        // triple-enhanced merging
        merge_cb1_ = make_conv("merge.cb1", ch[4], ch[4], 1, 1);
        merge_cb1_ln_ = make_norm("merge.cb1.ln", ch[4]);
        merge_pv_ = make_conv("merge.pv_proj", ch[4], cfg.pv_channels, 3, 3);
        merge_cb2_ = make_conv("merge.cb2", ch[4], 2 * ch[4], 1, 1);
        merge_cb2_ln_ = make_norm("merge.cb2.ln", ch[4]);
    }

    std::array<ConvLayer, 5> enc_down_;
    std::array<NormPair, 5> enc_ln_;
    std::vector<VmBlock<T>> enc_vm_;
    std::array<ConvLayer, 4> dec_fuse_;
    std::array<NormPair, 4> dec_ln_;
    std::vector<VmBlock<T>> dec_vm_;
    ConvLayer head_mid_, head_out_;

    std::array<ConvLayer, 3> pv_down_;
    std::array<std::vector<NonBt1dUnit>, 3> pv_units_;
    ConvLayer pv_up1_, pv_up2_, pv_up3_, pv_head_;

    std::array<ConvLayer, 5> prior_down_;
    ConvLayer prior_refine_;
    NormPair prior_bn1_, prior_bn2_;
    Tensor<T> prior_bn1_mean_, prior_bn1_var_, prior_bn2_mean_, prior_bn2_var_;

    ConvLayer merge_cb1_, merge_pv_, merge_cb2_;
    NormPair merge_cb1_ln_, merge_cb2_ln_;
};

}  // namespace bevkit
