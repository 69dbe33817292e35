#pragma once

#include <algorithm>
#include <cmath>

#include "vlpose/vlpose.hpp"

namespace vlpose::testing {

inline const EvalConfig kCoco = EvalConfig::coco();

inline PersonInstance person(std::int64_t id, std::int64_t image, Rng& rng, int category = 1) {
    PersonInstance p;
    p.id = id;
    p.image_id = image;
    p.category_id = category;
    p.bbox = {rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(40, 120), rng.uniform(60, 160)};
    p.area = p.bbox.w * p.bbox.h;
    for (int k = 0; k < 17; ++k)
        p.keypoints.push_back({p.bbox.x + rng.uniform(0, p.bbox.w), p.bbox.y + rng.uniform(0, p.bbox.h), rng.uniform() < 0.15 ? 0 : 2});
    if (p.num_labeled() == 0) p.keypoints[0].v = 2;
    return p;
}

inline Prediction jittered(const PersonInstance& g, double sd, double score, Rng& rng) {
    Prediction p{g.image_id, g.category_id, {}, score};
    for (const auto& k : g.keypoints) p.keypoints.push_back({k.x + sd * rng.normal(), k.y + sd * rng.normal(), 1});
    return p;
}

inline Dataset random_dataset(Rng& rng, std::size_t images = 10, std::size_t max_people = 5) {
    Dataset ds;
    std::int64_t aid = 1;
    for (std::size_t i = 1; i <= images; ++i) {
        ds.images.push_back({std::int64_t(i), 300, 300, ""});
        const std::size_t n = rng.below(max_people + 1);
        for (std::size_t j = 0; j < n; ++j) ds.annotations.push_back(person(aid++, std::int64_t(i), rng));
    }
    ds.categories[1] = "person";
    return ds;
}

inline std::vector<Prediction> random_predictions(const Dataset& ds, Rng& rng) {
    std::vector<Prediction> preds;
    for (const auto& g : ds.annotations) {
        if (rng.uniform() < 0.8) preds.push_back(jittered(g, rng.uniform(0, 12), rng.uniform(), rng));
        if (rng.uniform() < 0.3) preds.push_back(jittered(g, rng.uniform(0, 4), rng.uniform(), rng));  // duplicate
    }
    for (const auto& im : ds.images)
        if (rng.uniform() < 0.4) {
            Rng r2(rng.next_u64());
            preds.push_back(jittered(person(0, im.id, r2), 1, rng.uniform(), rng));  // spurious
        }
    return preds;
}

// Direct transcription of the metric, loop by loop, sharing no code with the library.
inline double brute_oks(const Prediction& d, const PersonInstance& g) {
    double s = 0;
    int n = 0;
    for (std::size_t k = 0; k < 17; ++k) {
        if (g.keypoints[k].v == 0) continue;
        const double dx = d.keypoints[k].x - g.keypoints[k].x;
        const double dy = d.keypoints[k].y - g.keypoints[k].y;
        const double kk = 2 * coco_sigmas()[k];
        s += std::exp(-(dx * dx + dy * dy) / (2 * g.area * kk * kk));
        ++n;
    }
    return s / n;
}

/// Greedy matching: each detection, in order, takes the unused ground truth
/// with the highest similarity at or above `thr`; ties go to the lowest index.
inline std::vector<int> brute_match(const std::vector<std::vector<double>>& s, std::size_t num_gt, double thr) {
    std::vector<int> out;
    std::vector<bool> used(num_gt, false);
    for (const auto& row : s) {
        int best = -1;
        for (std::size_t j = 0; j < num_gt; ++j)
            if (!used[j] && row[j] >= thr && (best < 0 || row[j] > row[std::size_t(best)])) best = int(j);
        if (best >= 0) used[std::size_t(best)] = true;
        out.push_back(best);
    }
    return out;
}

struct BruteResult {
    std::vector<double> ap, recall;
};

inline BruteResult brute_force(const Dataset& ds, const std::vector<Prediction>& preds) {
    BruteResult out;
    std::size_t npos = 0;
    for (const auto& g : ds.annotations) npos += g.num_labeled() > 0;
    for (double thr : kCoco.thresholds) {
        struct Det {
            double score;
            std::int64_t image;
            std::size_t rank;
            bool tp;
        };
        std::vector<Det> dets;
        for (const auto& im : ds.images) {
            std::vector<const Prediction*> d;
            for (const auto& p : preds)
                if (p.image_id == im.id) d.push_back(&p);
            std::stable_sort(d.begin(), d.end(), [](auto* a, auto* b) { return a->score > b->score; });
            if (d.size() > 20) d.resize(20);
            std::vector<const PersonInstance*> g;
            for (const auto& a : ds.annotations)
                if (a.image_id == im.id && a.num_labeled() > 0) g.push_back(&a);
            std::vector<bool> used(g.size(), false);
            for (std::size_t i = 0; i < d.size(); ++i) {
                int best = -1;
                double best_v = -1;
                for (std::size_t j = 0; j < g.size(); ++j) {
                    if (used[j]) continue;
                    const double v = brute_oks(*d[i], *g[j]);
                    if (v >= thr && v > best_v) {
                        best_v = v;
                        best = int(j);
                    }
                }
                if (best >= 0) used[std::size_t(best)] = true;
                dets.push_back({d[i]->score, im.id, i, best >= 0});
            }
        }
        std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
            return a.score != b.score ? a.score > b.score : a.image != b.image ? a.image < b.image : a.rank < b.rank;
        });
        std::vector<double> prec, rec;
        double tp = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            tp += dets[i].tp;
            prec.push_back(tp / double(i + 1));
            rec.push_back(tp / double(npos));
        }
        double ap = 0;
        for (int r = 0; r <= 100; ++r) {
            double best = 0;
            for (std::size_t i = 0; i < prec.size(); ++i)
                if (rec[i] >= r / 100.0) best = std::max(best, prec[i]);
            ap += best;
        }
        out.ap.push_back(ap / 101);
        out.recall.push_back(tp / double(npos));
    }
    return out;
}

}  // namespace vlpose::testing
