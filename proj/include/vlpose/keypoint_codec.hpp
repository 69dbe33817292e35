#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vlpose/image.hpp"

namespace vlpose {

struct BBox {
    double x = 0, y = 0, w = 0, h = 0;
};

/// v: 0 unlabeled, 1 labeled but occluded, 2 labeled and visible.
struct Keypoint {
    double x = 0, y = 0;
    int v = 0;
};

struct PersonInstance {
    std::int64_t id = 0;
    std::int64_t image_id = 0;
    int category_id = 1;
    BBox bbox;
    std::vector<Keypoint> keypoints;
    double area = 0;

    std::size_t num_labeled() const {
        std::size_t n = 0;
        for (const auto& k : keypoints) n += k.v > 0;
        return n;
    }
};

/// Source image -> model input affine map x' = (x - x0) * s, y' = (y - y0) * s.
struct CropTransform {
    std::array<double, 6> fwd{1, 0, 0, 0, 1, 0};  // row-major 2x3
    std::array<double, 6> inv{1, 0, 0, 0, 1, 0};

    std::pair<double, double> to_input(double x, double y) const {
        return {fwd[0] * x + fwd[1] * y + fwd[2], fwd[3] * x + fwd[4] * y + fwd[5]};
    }
    std::pair<double, double> to_source(double x, double y) const {
        return {inv[0] * x + inv[1] * y + inv[2], inv[3] * x + inv[4] * y + inv[5]};
    }

    static CropTransform scale_translate(double s, double x0, double y0) {
        CropTransform t;
        t.fwd = {s, 0, -x0 * s, 0, s, -y0 * s};
        t.inv = {1.0 / s, 0, x0, 0, 1.0 / s, y0};
        return t;
    }
};

/// Grows the box about its centre to the input aspect (w/h = out_w/out_h).
inline BBox expand_to_aspect(const BBox& b, std::size_t out_h, std::size_t out_w) {
    if (!(b.w > 0) || !(b.h > 0)) throw std::invalid_argument("degenerate box: width and height must be positive");
    const double aspect = double(out_w) / double(out_h);
    BBox r = b;
    if (b.w > aspect * b.h) r.h = b.w / aspect;
    else r.w = b.h * aspect;
    r.x = b.x + 0.5 * (b.w - r.w);
    r.y = b.y + 0.5 * (b.h - r.h);
    return r;
}

inline CropTransform crop_transform(const BBox& box, std::size_t out_h, std::size_t out_w) {
    const BBox e = expand_to_aspect(box, out_h, out_w);
    return CropTransform::scale_translate(double(out_h) / e.h, e.x, e.y);
}

struct Crop {
    Tensor<float> input;  // [3 x out_h x out_w]
    CropTransform transform;
};

/// Expands the box to the input aspect, then samples the region bilinearly.
/// Pixels falling outside the source image read as black.
inline Crop affine_crop(const Image& img, const BBox& box, std::size_t out_h, std::size_t out_w) {
    Crop c;
    c.transform = crop_transform(box, out_h, out_w);
    c.input = Tensor<float>({3, out_h, out_w});
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto [sx, sy] = c.transform.to_source(double(x), double(y));
            for (std::size_t ch = 0; ch < 3; ++ch)
                c.input[(ch * out_h + y) * out_w + x] =
                    normalize_pixel(sample_bilinear(img, sx, sy, img.channels == 3 ? ch : 0));
        }
    return c;
}

/// Heatmap cell <-> input pixel under the pixel-centre convention.
inline double heatmap_to_input(double idx, double stride) { return (idx + 0.5) * stride - 0.5; }
inline double input_to_heatmap(double px, double stride) { return (px + 0.5) / stride - 0.5; }

struct HeatmapTargets {
    Tensor<float> maps;  // [K x h x w]
    Tensor<float> mask;  // [K]
};

/// Unnormalized Gaussians with peak 1 at each labeled keypoint (input coords).
/// Unlabeled keypoints and peaks outside the grid get an all-zero map and mask 0.
inline HeatmapTargets gaussian_targets(const std::vector<Keypoint>& kps, std::size_t grid_h, std::size_t grid_w,
                                       double sigma = 2.0, double stride = 4.0) {
    HeatmapTargets t{Tensor<float>({kps.size(), grid_h, grid_w}), Tensor<float>({kps.size()})};
    for (std::size_t k = 0; k < kps.size(); ++k) {
        if (kps[k].v == 0) continue;
        const double cx = input_to_heatmap(kps[k].x, stride), cy = input_to_heatmap(kps[k].y, stride);
        if (cx < -0.5 || cy < -0.5 || cx >= double(grid_w) - 0.5 || cy >= double(grid_h) - 0.5) continue;
        t.mask[k] = 1.0f;
        float* m = t.maps.data() + k * grid_h * grid_w;
        for (std::size_t y = 0; y < grid_h; ++y)
            for (std::size_t x = 0; x < grid_w; ++x) {
                const double dx = double(x) - cx, dy = double(y) - cy;
                m[y * grid_w + x] = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
            }
    }
    return t;
}

struct DecodedKeypoint {
    double x = 0, y = 0;  // source coordinates
    double score = 0;     // raw peak value
    bool degenerate = false;
};

/// Argmax per channel (ties: lowest row-major index), quarter-cell shift
/// toward the larger neighbour, then back through the crop transform.
/// A constant map decodes to the centre cell and is flagged degenerate.
inline std::vector<DecodedKeypoint> heatmaps_to_keypoints(const Tensor<float>& maps, const CropTransform& tf,
                                                          double stride = 4.0) {
    if (maps.rank() != 3) throw DimensionError("heatmaps_to_keypoints: expected [K,h,w], got " + shape_str(maps.shape()));
    const std::size_t K = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    std::vector<DecodedKeypoint> out(K);
    for (std::size_t k = 0; k < K; ++k) {
        const float* m = maps.data() + k * h * w;
        std::size_t best = 0;
        float lo = m[0];
        for (std::size_t i = 1; i < h * w; ++i) {
            if (m[i] > m[best]) best = i;
            lo = std::min(lo, m[i]);
        }
        DecodedKeypoint& d = out[k];
        d.score = m[best];
        std::size_t bx = best % w, by = best / w;
        double fx = double(bx), fy = double(by);
        if (lo == m[best]) {
            d.degenerate = true;
            fx = double(w / 2);
            fy = double(h / 2);
        } else {
            if (bx > 0 && bx + 1 < w) {
                const float diff = m[by * w + bx + 1] - m[by * w + bx - 1];
                fx += diff > 0 ? 0.25 : diff < 0 ? -0.25 : 0.0;
            }
            if (by > 0 && by + 1 < h) {
                const float diff = m[(by + 1) * w + bx] - m[(by - 1) * w + bx];
                fy += diff > 0 ? 0.25 : diff < 0 ? -0.25 : 0.0;
            }
        }
        std::tie(d.x, d.y) = tf.to_source(heatmap_to_input(fx, stride), heatmap_to_input(fy, stride));
    }
    return out;
}

/// Instance confidence: mean peak value, clamped to [0, 1] for scoring only.
inline double instance_score(const std::vector<DecodedKeypoint>& kps) {
    if (kps.empty()) return 0.0;
    double s = 0;
    for (const auto& k : kps) s += std::clamp(k.score, 0.0, 1.0);
    return s / double(kps.size());
}

}  // namespace vlpose
