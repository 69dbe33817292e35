#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlpose/keypoint_codec.hpp"

namespace vlpose {

// ---------------------------------------------------------------------------
// Dataset / result containers

struct ImageInfo {
    std::int64_t id = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    std::string file_name;
};

struct Dataset {
    std::vector<ImageInfo> images;
    std::vector<PersonInstance> annotations;
    std::map<int, std::string> categories;

    const ImageInfo& image(std::int64_t id) const {
        for (const auto& im : images)
            if (im.id == id) return im;
        throw LookupError("no image with id " + std::to_string(id));
    }
};

struct PredictedPoint {
    double x = 0, y = 0, score = 0;
};

struct Prediction {
    std::int64_t image_id = 0;
    int category_id = 1;
    std::vector<PredictedPoint> keypoints;
    double score = 0;
};

// ---------------------------------------------------------------------------
// Configuration

/// COCO 17-keypoint sigmas; the falloff constants are k_i = 2 * sigma_i.
inline const std::vector<double>& coco_sigmas() {
    static const std::vector<double> s{.026, .025, .025, .035, .035, .079, .079, .072, .072,
                                       .062, .062, .107, .107, .087, .087, .089, .089};
    return s;
}

struct EvalConfig {
    std::vector<double> falloff;     // k_i per keypoint
    std::vector<double> thresholds;  // OKS thresholds
    std::size_t max_dets = 20;       // per image

    static EvalConfig coco() {
        EvalConfig c;
        for (double s : coco_sigmas()) c.falloff.push_back(2.0 * s);
        for (int i = 0; i < 10; ++i) c.thresholds.push_back(0.5 + 0.05 * i);
        return c;
    }

    void validate() const {
        if (falloff.empty()) throw ConfigError("eval config: no falloff constants");
        for (double k : falloff)
            if (!(k > 0)) throw ConfigError("eval config: falloff constants must be positive");
        if (thresholds.size() != 10) throw ConfigError("eval config: expected 10 OKS thresholds");
        for (std::size_t i = 1; i < thresholds.size(); ++i)
            if (!(thresholds[i] > thresholds[i - 1])) throw ConfigError("eval config: thresholds must increase");
        if (max_dets == 0) throw ConfigError("eval config: max_dets must be positive");
    }
};

// ---------------------------------------------------------------------------
// OKS and matching

/// Mean over labeled keypoints of exp(-d^2 / (2 s^2 k^2)), s^2 = gt area.
inline double oks(const std::vector<PredictedPoint>& pred, const PersonInstance& gt, const EvalConfig& cfg) {
    if (pred.size() != gt.keypoints.size() || gt.keypoints.size() != cfg.falloff.size())
        throw DimensionError("oks: keypoint counts differ (pred " + std::to_string(pred.size()) + ", gt " +
                             std::to_string(gt.keypoints.size()) + ", config " + std::to_string(cfg.falloff.size()) + ")");
    double acc = 0;
    std::size_t n = 0;
    const double s2 = gt.area;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (gt.keypoints[i].v == 0) continue;
        const double dx = pred[i].x - gt.keypoints[i].x, dy = pred[i].y - gt.keypoints[i].y;
        const double k = cfg.falloff[i];
        acc += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * k * k));
        ++n;
    }
    if (n == 0) throw std::invalid_argument("oks: ground truth instance " + std::to_string(gt.id) + " has no labeled keypoints");
    return acc / double(n);
}

/// ious[p][g] for predictions already sorted by descending score. Each
/// prediction in turn takes the unmatched gt with the highest OKS >= threshold
/// (ties: lowest gt index). Returns the gt index per prediction or -1.
inline std::vector<int> match_instances(const std::vector<std::vector<double>>& ious, std::size_t num_gt, double threshold) {
    std::vector<int> match(ious.size(), -1);
    std::vector<bool> taken(num_gt, false);
    for (std::size_t p = 0; p < ious.size(); ++p) {
        int best = -1;
        double best_oks = threshold;
        for (std::size_t g = 0; g < num_gt; ++g) {
            if (taken[g]) continue;
            if (ious[p][g] >= best_oks && (best < 0 || ious[p][g] > best_oks)) {
                best = static_cast<int>(g);
                best_oks = ious[p][g];
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(best)] = true;
            match[p] = best;
        }
    }
    return match;
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalResult {
    bool empty = true;  // no labeled ground truth: metrics undefined
    double ap = 0, ap50 = 0, ap75 = 0, ar = 0, ar50 = 0;
    std::vector<double> ap_per_threshold;
    std::vector<double> recall_per_threshold;
    std::map<int, std::optional<double>> per_category_ap;  // nullopt: category has no ground truth
    std::size_t num_images = 0;
    std::size_t num_instances = 0;
};

/// 101-point interpolated AP from a ranked list of true/false positives.
inline double interpolated_ap(const std::vector<bool>& tp_sorted, std::size_t npos) {
    if (npos == 0) return 0.0;
    const std::size_t n = tp_sorted.size();
    std::vector<double> recall(n), precision(n);
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (tp_sorted[i] ? tp : fp) += 1;
        recall[i] = tp / double(npos);
        precision[i] = tp / (tp + fp);
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) sum += precision[std::size_t(it - recall.begin())];
    }
    return sum / 101.0;
}

namespace detail {

struct RankedDet {
    double score;
    std::int64_t image_id;
    std::size_t rank;        // position within its image
    std::vector<bool> tp;    // per threshold
};

inline EvalResult evaluate_subset(const std::vector<const PersonInstance*>& gts, const std::vector<const Prediction*>& preds,
                                  const EvalConfig& cfg) {
    EvalResult r;
    std::map<std::int64_t, std::vector<const PersonInstance*>> gt_by_image;
    std::map<std::int64_t, std::vector<const Prediction*>> det_by_image;
    std::size_t npos = 0;
    for (const auto* g : gts) {
        if (g->num_labeled() == 0) continue;
        gt_by_image[g->image_id].push_back(g);
        ++npos;
    }
    for (const auto* p : preds) det_by_image[p->image_id].push_back(p);
    r.num_instances = npos;
    std::vector<std::int64_t> ids;
    for (const auto& [id, _] : gt_by_image) ids.push_back(id);
    for (const auto& [id, _] : det_by_image)
        if (!gt_by_image.count(id)) ids.push_back(id);
    r.num_images = gt_by_image.size();
    const std::size_t T = cfg.thresholds.size();
    std::vector<RankedDet> all;
    for (std::int64_t id : ids) {
        auto dets = det_by_image[id];
        std::stable_sort(dets.begin(), dets.end(), [](const Prediction* a, const Prediction* b) { return a->score > b->score; });
        if (dets.size() > cfg.max_dets) dets.resize(cfg.max_dets);
        const auto& g = gt_by_image[id];
        std::vector<std::vector<double>> ious(dets.size(), std::vector<double>(g.size()));
        for (std::size_t p = 0; p < dets.size(); ++p)
            for (std::size_t j = 0; j < g.size(); ++j) ious[p][j] = oks(dets[p]->keypoints, *g[j], cfg);
        std::vector<RankedDet> local(dets.size());
        for (std::size_t p = 0; p < dets.size(); ++p) local[p] = {dets[p]->score, id, p, std::vector<bool>(T, false)};
        for (std::size_t t = 0; t < T; ++t) {
            const auto m = match_instances(ious, g.size(), cfg.thresholds[t]);
            for (std::size_t p = 0; p < dets.size(); ++p) local[p].tp[t] = m[p] >= 0;
        }
        for (auto& d : local) all.push_back(std::move(d));
    }
    if (npos == 0) return r;
    r.empty = false;
    std::sort(all.begin(), all.end(), [](const RankedDet& a, const RankedDet& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image_id != b.image_id) return a.image_id < b.image_id;
        return a.rank < b.rank;
    });
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<bool> tp(all.size());
        std::size_t hits = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            tp[i] = all[i].tp[t];
            hits += tp[i];
        }
        r.ap_per_threshold.push_back(interpolated_ap(tp, npos));
        r.recall_per_threshold.push_back(double(hits) / double(npos));
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / double(v.size());
    };
    auto at = [&](const std::vector<double>& v, double thr) {
        for (std::size_t t = 0; t < T; ++t)
            if (std::abs(cfg.thresholds[t] - thr) < 1e-9) return v[t];
        return -1.0;
    };
    r.ap = mean(r.ap_per_threshold);
    r.ar = mean(r.recall_per_threshold);
    r.ap50 = at(r.ap_per_threshold, 0.5);
    r.ap75 = at(r.ap_per_threshold, 0.75);
    r.ar50 = at(r.recall_per_threshold, 0.5);
    return r;
}

}  // namespace detail

/// Overall metrics pool every category (person keypoints are one class);
/// per-category AP is computed on the category-filtered subsets.
inline EvalResult compute_metrics(const Dataset& ds, const std::vector<Prediction>& preds, const EvalConfig& cfg) {
    cfg.validate();
    std::vector<const PersonInstance*> gts;
    for (const auto& a : ds.annotations) gts.push_back(&a);
    std::vector<const Prediction*> dets;
    for (const auto& p : preds) dets.push_back(&p);
    EvalResult r = detail::evaluate_subset(gts, dets, cfg);
    for (const auto& [cid, name] : ds.categories) {
        std::vector<const PersonInstance*> g;
        std::vector<const Prediction*> d;
        for (const auto* a : gts)
            if (a->category_id == cid) g.push_back(a);
        for (const auto* p : dets)
            if (p->category_id == cid) d.push_back(p);
        const EvalResult sub = detail::evaluate_subset(g, d, cfg);
        r.per_category_ap[cid] = sub.empty ? std::nullopt : std::optional<double>(sub.ap);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Metrics output

inline std::string format_metric(std::optional<double> v) {
    if (!v) return "empty";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

/// `metric,category,value` rows: overall first, then AP per dataset category.
inline std::string metrics_csv(const EvalResult& r, const Dataset& ds) {
    std::string s = "metric,category,value\n";
    auto overall = [&](const char* name, double v) {
        s += std::string(name) + ",all," + format_metric(r.empty ? std::nullopt : std::optional<double>(v)) + "\n";
    };
    overall("AP", r.ap);
    overall("AP50", r.ap50);
    overall("AP75", r.ap75);
    overall("AR", r.ar);
    overall("AR50", r.ar50);
    for (const auto& [cid, v] : r.per_category_ap) {
        auto it = ds.categories.find(cid);
        s += "AP," + (it != ds.categories.end() ? it->second : std::to_string(cid)) + "," + format_metric(v) + "\n";
    }
    return s;
}

inline nlohmann::json metrics_json(const EvalResult& r, const Dataset& ds) {
    using nlohmann::json;
    auto val = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
    auto ov = [&](double v) { return val(r.empty ? std::nullopt : std::optional<double>(v)); };
    json j;
    j["overall"] = {{"AP", ov(r.ap)}, {"AP50", ov(r.ap50)}, {"AP75", ov(r.ap75)}, {"AR", ov(r.ar)}, {"AR50", ov(r.ar50)}};
    j["per_category"] = json::array();
    for (const auto& [cid, v] : r.per_category_ap) {
        auto it = ds.categories.find(cid);
        j["per_category"].push_back({{"id", cid}, {"name", it != ds.categories.end() ? it->second : ""}, {"AP", val(v)}});
    }
    j["images"] = r.num_images;
    j["instances"] = r.num_instances;
    return j;
}

// ---------------------------------------------------------------------------
// JSON ingestion

namespace detail {

inline std::vector<Keypoint> parse_keypoint_triples(const nlohmann::json& arr, const std::string& who) {
    if (!arr.is_array() || arr.size() % 3 != 0) throw ParseError(who + ": keypoints must be a flat array of (x, y, v) triples");
    std::vector<Keypoint> kps;
    for (std::size_t i = 0; i < arr.size(); i += 3) {
        if (!arr[i].is_number() || !arr[i + 1].is_number() || !arr[i + 2].is_number())
            throw ParseError(who + ": non-numeric keypoint entry");
        const double v = arr[i + 2].get<double>();
        if (v != 0 && v != 1 && v != 2)
            throw ParseError(who + ": visibility flag " + arr[i + 2].dump() + " outside {0,1,2}");
        kps.push_back({arr[i].get<double>(), arr[i + 1].get<double>(), static_cast<int>(v)});
    }
    return kps;
}

template <typename J>
const nlohmann::json& require(const J& obj, const char* key, const std::string& who) {
    if (!obj.contains(key)) throw ParseError(who + ": missing required field '" + key + "'");
    return obj.at(key);
}

}  // namespace detail

inline Dataset parse_annotations(const nlohmann::json& j) {
    using detail::require;
    Dataset ds;
    if (!j.is_object()) throw ParseError("annotations: top level must be an object");
    for (const auto& im : require(j, "images", "annotations file")) {
        const std::string who = "image " + (im.contains("id") ? im["id"].dump() : std::string("?"));
        ImageInfo info;
        info.id = require(im, "id", who).get<std::int64_t>();
        info.width = require(im, "width", who).get<std::size_t>();
        info.height = require(im, "height", who).get<std::size_t>();
        info.file_name = im.value("file_name", std::string());
        ds.images.push_back(info);
    }
    if (j.contains("categories"))
        for (const auto& c : j["categories"]) {
            const std::string who = "category " + (c.contains("id") ? c["id"].dump() : std::string("?"));
            ds.categories[require(c, "id", who).get<int>()] = c.value("name", std::string());
        }
    std::map<std::int64_t, const ImageInfo*> by_id;
    for (const auto& im : ds.images) by_id[im.id] = &im;
    for (const auto& a : require(j, "annotations", "annotations file")) {
        const std::string who = "annotation " + (a.contains("id") ? a["id"].dump() : std::string("<no id>"));
        if (!a.contains("id")) throw ParseError(who + ": missing required field 'id'");
        PersonInstance p;
        p.id = a["id"].get<std::int64_t>();
        p.image_id = require(a, "image_id", who).get<std::int64_t>();
        p.category_id = require(a, "category_id", who).get<int>();
        const auto& bb = require(a, "bbox", who);
        if (!bb.is_array() || bb.size() != 4) throw ParseError(who + ": bbox must be [x, y, w, h]");
        p.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
        if (!(p.bbox.w > 0) || !(p.bbox.h > 0)) throw ParseError(who + ": bbox width and height must be positive");
        p.keypoints = detail::parse_keypoint_triples(require(a, "keypoints", who), who);
        p.area = a.contains("area") ? a["area"].get<double>() : p.bbox.w * p.bbox.h;
        auto it = by_id.find(p.image_id);
        if (it == by_id.end()) throw ParseError(who + ": image_id " + std::to_string(p.image_id) + " not in images");
        if (!ds.categories.empty() && !ds.categories.count(p.category_id))
            throw ParseError(who + ": category_id " + std::to_string(p.category_id) + " not in categories");
        for (const auto& k : p.keypoints)
            if (k.v > 0 && (k.x < 0 || k.y < 0 || k.x > double(it->second->width) || k.y > double(it->second->height)))
                throw ParseError(who + ": labeled keypoint outside the image bounds");
        ds.annotations.push_back(std::move(p));
    }
    return ds;
}

inline nlohmann::json annotations_to_json(const Dataset& ds) {
    using nlohmann::json;
    json j;
    j["images"] = json::array();
    for (const auto& im : ds.images)
        j["images"].push_back({{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file_name", im.file_name}});
    j["annotations"] = json::array();
    for (const auto& a : ds.annotations) {
        json kps = json::array();
        for (const auto& k : a.keypoints) {
            kps.push_back(k.x);
            kps.push_back(k.y);
            kps.push_back(k.v);
        }
        j["annotations"].push_back({{"id", a.id},
                                    {"image_id", a.image_id},
                                    {"category_id", a.category_id},
                                    {"bbox", {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h}},
                                    {"keypoints", kps},
                                    {"area", a.area},
                                    {"num_keypoints", a.num_labeled()}});
    }
    j["categories"] = json::array();
    for (const auto& [id, name] : ds.categories) j["categories"].push_back({{"id", id}, {"name", name}});
    return j;
}

inline std::vector<Prediction> parse_results(const nlohmann::json& j) {
    using detail::require;
    if (!j.is_array()) throw ParseError("results: top level must be an array");
    std::vector<Prediction> out;
    std::size_t idx = 0;
    for (const auto& r : j) {
        const std::string who = "result " + std::to_string(idx++);
        Prediction p;
        p.image_id = require(r, "image_id", who).get<std::int64_t>();
        p.category_id = r.value("category_id", 1);
        p.score = require(r, "score", who).get<double>();
        const auto& k = require(r, "keypoints", who);
        if (!k.is_array() || k.size() % 3 != 0) throw ParseError(who + ": keypoints must be (x, y, score) triples");
        for (std::size_t i = 0; i < k.size(); i += 3)
            p.keypoints.push_back({k[i].get<double>(), k[i + 1].get<double>(), k[i + 2].get<double>()});
        out.push_back(std::move(p));
    }
    return out;
}

inline nlohmann::json results_to_json(const std::vector<Prediction>& preds) {
    using nlohmann::json;
    json j = json::array();
    for (const auto& p : preds) {
        json kps = json::array();
        for (const auto& k : p.keypoints) {
            kps.push_back(k.x);
            kps.push_back(k.y);
            kps.push_back(k.score);
        }
        j.push_back({{"image_id", p.image_id}, {"category_id", p.category_id}, {"keypoints", kps}, {"score", p.score}});
    }
    return j;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline Dataset load_annotations(const std::filesystem::path& path) { return parse_annotations(read_json_file(path)); }
inline std::vector<Prediction> load_results(const std::filesystem::path& path) { return parse_results(read_json_file(path)); }

inline void save_annotations(const std::filesystem::path& path, const Dataset& ds) {
    write_text_file(path, annotations_to_json(ds).dump(1) + "\n");
}
inline void save_results(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
    write_text_file(path, results_to_json(preds).dump(1) + "\n");
}

/// Ground truth as perfect predictions (score 1); unlabeled points copied as-is.
inline std::vector<Prediction> oracle_predictions(const Dataset& ds) {
    std::vector<Prediction> out;
    for (const auto& a : ds.annotations) {
        Prediction p{a.image_id, a.category_id, {}, 1.0};
        for (const auto& k : a.keypoints) p.keypoints.push_back({k.x, k.y, 1.0});
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace vlpose
