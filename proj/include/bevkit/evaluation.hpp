#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevkit/raster.hpp"
#include "bevkit/synthworld.hpp"

namespace bevkit {

// |pred AND gt| / |pred OR gt|; two empty masks agree vacuously (1).
inline double iou(const MapRaster& pred, const MapRaster& gt) {
    if (pred.data.size() != gt.data.size() || !(pred.grid == gt.grid))
        throw std::invalid_argument("iou: shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0.0f, g = gt.data[i] != 0.0f;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Arc-length-uniform resampling to k points (endpoints included).
inline std::vector<std::pair<double, double>> resample_polyline(const Polyline& p, int k) {
    if (p.size() < 2) throw std::invalid_argument("resample_polyline: need >= 2 vertices");
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < p.size(); ++i)
        cum.push_back(cum.back() +
                      std::hypot(p[i].first - p[i - 1].first, p[i].second - p[i - 1].second));
    const double total = cum.back();
    if (total <= 0.0) throw std::invalid_argument("resample_polyline: zero-length polyline");
    std::vector<std::pair<double, double>> out;
    out.reserve(k);
    std::size_t seg = 1;
    for (int i = 0; i < k; ++i) {
        const double s = total * i / (k - 1);
        while (seg + 1 < cum.size() && cum[seg] < s) ++seg;
        const double seg_len = cum[seg] - cum[seg - 1];
        const double t = seg_len > 0.0 ? (s - cum[seg - 1]) / seg_len : 0.0;
        out.emplace_back(p[seg - 1].first + t * (p[seg].first - p[seg - 1].first),
                         p[seg - 1].second + t * (p[seg].second - p[seg - 1].second));
    }
    return out;
}

// Symmetric Chamfer distance over k resampled points each:
// 0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|).
inline double chamfer_distance(const Polyline& a, const Polyline& b, int samples = 100) {
    const auto pa = resample_polyline(a, samples);
    const auto pb = resample_polyline(b, samples);
    auto one_way = [](const std::vector<std::pair<double, double>>& from,
                      const std::vector<std::pair<double, double>>& to) {
        double acc = 0.0;
        for (const auto& [x, y] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [u, v] : to) best = std::min(best, std::hypot(x - u, y - v));
            acc += best;
        }
        return acc / static_cast<double>(from.size());
    };
    return 0.5 * (one_way(pa, pb) + one_way(pb, pa));
}

struct VectorPrediction {
    int cls = 0;
    Polyline points;
    double confidence = 1.0;

    void validate() const {
        if (points.size() < 2) throw std::invalid_argument("VectorPrediction: need >= 2 vertices");
        for (const auto& [x, y] : points)
            if (!std::isfinite(x) || !std::isfinite(y))
                throw std::invalid_argument("VectorPrediction: non-finite coordinate");
        if (confidence < 0.0 || confidence > 1.0)
            throw std::invalid_argument("VectorPrediction: confidence outside [0, 1]");
    }
};

inline const std::array<double, 3> kChamferThresholds = {0.5, 1.0, 1.5};

// Average precision at one Chamfer threshold: confidence-ordered greedy
// matching to the nearest unmatched ground truth, then the interpolated
// precision integrated over the 101-point recall grid (100 intervals).
inline double average_precision_single(const std::vector<VectorPrediction>& preds,
                                       const std::vector<Polyline>& gts, double threshold) {
    if (gts.empty()) return 0.0;
    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].confidence > preds[b].confidence;
    });

    std::vector<bool> gt_used(gts.size(), false);
    std::vector<bool> is_tp;
    is_tp.reserve(order.size());
    for (std::size_t oi : order) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_gt = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g]) continue;
            const double cd = chamfer_distance(preds[oi].points, gts[g]);
            if (cd < best) {
                best = cd;
                best_gt = g;
            }
        }
        if (best_gt < gts.size() && best < threshold) {
            gt_used[best_gt] = true;
            is_tp.push_back(true);
        } else {
            is_tp.push_back(false);
        }
    }

    // precision-recall prefix curve
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < is_tp.size(); ++k) {
        tp += is_tp[k];
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    }

    double ap = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double r = static_cast<double>(k) / 100.0;
        double p_interp = 0.0;
        for (std::size_t i = 0; i < precision.size(); ++i)
            if (recall[i] >= r - 1e-12) p_interp = std::max(p_interp, precision[i]);
        ap += p_interp;
    }
    return ap / 100.0;
}

struct VectorScores {
    std::array<double, 3> class_ap{};  // divider, crossing, boundary
    double map = 0.0;
};

// Per-class AP averaged over the Chamfer thresholds; mAP over classes that
// have ground truth.
inline VectorScores average_precision(const std::vector<VectorPrediction>& preds,
                                      const std::vector<VectorElement>& gts,
                                      const std::array<double, 3>& thresholds = kChamferThresholds) {
    for (const auto& p : preds) p.validate();
    VectorScores scores;
    int classes_with_gt = 0;
    for (int cls = 1; cls <= 3; ++cls) {
        std::vector<VectorPrediction> cls_preds;
        for (const auto& p : preds)
            if (p.cls == cls) cls_preds.push_back(p);
        std::vector<Polyline> cls_gts;
        for (const auto& g : gts)
            if (g.cls == cls) cls_gts.push_back(g.points);
        if (cls_gts.empty()) {
            scores.class_ap[cls - 1] = 0.0;
            continue;
        }
        ++classes_with_gt;
        double acc = 0.0;
        for (double tau : thresholds) acc += average_precision_single(cls_preds, cls_gts, tau);
        scores.class_ap[cls - 1] = acc / thresholds.size();
        scores.map += scores.class_ap[cls - 1];
    }
    scores.map = classes_with_gt > 0 ? scores.map / classes_with_gt : 0.0;
    return scores;
}

inline double generalization_ratio(double m_cross, double m_source) {
    if (m_source <= 0.0) throw std::invalid_argument("generalization_ratio: m_source must be > 0");
    return m_cross / m_source;
}

// --- aggregate segmentation scoring -------------------------------------------

// Dataset-level IoU accumulator: intersection and union counts per foreground
// class, reduced once at the end.
struct SegAccumulator {
    std::array<std::size_t, 3> inter{}, uni{};

    void add(const MapRaster& pred_classes, const MapRaster& gt_classes) {
        if (pred_classes.data.size() != gt_classes.data.size())
            throw std::invalid_argument("SegAccumulator: shape mismatch");
        for (std::size_t i = 0; i < pred_classes.data.size(); ++i) {
            const int p = static_cast<int>(pred_classes.data[i]);
            const int g = static_cast<int>(gt_classes.data[i]);
            for (int cls = 1; cls <= 3; ++cls) {
                const bool pp = p == cls, gg = g == cls;
                inter[cls - 1] += pp && gg;
                uni[cls - 1] += pp || gg;
            }
        }
    }

    std::array<double, 3> class_iou() const {
        std::array<double, 3> out{};
        for (int c = 0; c < 3; ++c)
            out[c] = uni[c] == 0 ? 1.0 : static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        return out;
    }
    // unweighted mean of the three foreground classes
    double miou() const {
        const auto c = class_iou();
        return (c[0] + c[1] + c[2]) / 3.0;
    }
};

struct CorruptionRow {
    std::string kind;
    double severity = 0.0;
    double miou = 0.0;
};

struct EvalReport {
    std::array<double, 3> class_iou{};
    double miou = 0.0;
    std::optional<VectorScores> vector_scores;
    std::optional<double> generalization;
    double cvml_soft_l1 = 0.0;
    double cvml_hard_l1 = 0.0;
    std::vector<CorruptionRow> corruption;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["iou"] = {{"divider", class_iou[0]},
                    {"crossing", class_iou[1]},
                    {"boundary", class_iou[2]},
                    {"all_class", miou}};
        if (vector_scores) {
            j["ap"] = {{"divider", vector_scores->class_ap[0]},
                       {"crossing", vector_scores->class_ap[1]},
                       {"boundary", vector_scores->class_ap[2]},
                       {"all_class", vector_scores->map}};
        }
        if (generalization) j["generalization_ratio"] = *generalization;
        j["cvml"] = {{"soft_l1", cvml_soft_l1}, {"hard_l1", cvml_hard_l1}};
        if (!corruption.empty()) {
            j["corruption"] = nlohmann::json::array();
            for (const auto& row : corruption)
                j["corruption"].push_back(
                    {{"kind", row.kind}, {"severity", row.severity}, {"miou", row.miou}});
        }
        return j;
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("EvalReport: cannot write " + path);
        out << "metric,divider,crossing,boundary,all_class\n";
        out.precision(10);
        out << "iou," << class_iou[0] << "," << class_iou[1] << "," << class_iou[2] << "," << miou
            << "\n";
        if (vector_scores)
            out << "ap," << vector_scores->class_ap[0] << "," << vector_scores->class_ap[1] << ","
                << vector_scores->class_ap[2] << "," << vector_scores->map << "\n";
        out << "cvml_soft_l1,,,," << cvml_soft_l1 << "\n";
        out << "cvml_hard_l1,,,," << cvml_hard_l1 << "\n";
        if (generalization) out << "generalization_ratio,,,," << *generalization << "\n";
        for (const auto& row : corruption)
            out << "corruption_" << row.kind << "_" << row.severity << ",,,," << row.miou << "\n";
    }
};

// Clean row plus one row per corruption spec; the evaluator closure hides the
// model/checkpoint machinery so metrics stay free of it.
inline std::vector<CorruptionRow> corruption_sweep(
    const std::vector<CorruptionSpec>& specs,
    const std::function<double(const CorruptionSpec*)>& evaluate_miou) {
    std::vector<CorruptionRow> table;
    table.push_back({"clean", 0.0, evaluate_miou(nullptr)});
    for (const auto& spec : specs)
        table.push_back({corruption_name(spec.kind), spec.severity, evaluate_miou(&spec)});
    return table;
}

// --- vector map file: UTF-8 JSON list of {class, confidence, points} ----------

inline nlohmann::json vector_predictions_to_json(const std::vector<VectorPrediction>& preds) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : preds) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& [x, y] : p.points) pts.push_back({x, y});
        j.push_back({{"class", p.cls}, {"confidence", p.confidence}, {"points", pts}});
    }
    return j;
}

inline std::vector<VectorPrediction> vector_predictions_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("vector map: top-level JSON must be an array");
    std::vector<VectorPrediction> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        const std::string path = "[" + std::to_string(i) + "]";
        for (const char* field : {"class", "points"})
            if (!e.contains(field))
                throw std::invalid_argument("vector map: missing field " + path + "." + field);
        VectorPrediction p;
        p.cls = e.at("class").get<int>();
        p.confidence = e.value("confidence", 1.0);
        for (const auto& pt : e.at("points")) p.points.emplace_back(pt[0].get<double>(), pt[1].get<double>());
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace bevkit
