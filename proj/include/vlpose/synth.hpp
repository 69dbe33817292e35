#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "vlpose/evaluation.hpp"
#include "vlpose/rng.hpp"
#include "vlpose/text_embed.hpp"

namespace vlpose {

inline constexpr std::size_t kNumKeypoints = 17;

inline const std::array<const char*, kNumKeypoints>& keypoint_names() {
    static const std::array<const char*, kNumKeypoints> n{
        "nose",       "left_eye",    "right_eye", "left_ear",   "right_ear",  "left_shoulder",
        "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
        "right_hip",  "left_knee",   "right_knee", "left_ankle", "right_ankle"};
    return n;
}

/// Domain of a generated set: natural photos (categories 15..19), one art
/// style, every art style, or all 19 categories in rotation.
struct SynthDomain {
    enum class Kind { natural, art, art_all, all } kind = Kind::natural;
    int style = 0;

    static SynthDomain parse(const std::string& s) {
        if (s == "natural") return {Kind::natural, 0};
        if (s == "art") return {Kind::art_all, 0};
        if (s == "all") return {Kind::all, 0};
        if (s.rfind("art:", 0) == 0) {
            int id = 0;
            try {
                id = std::stoi(s.substr(4));
            } catch (const std::exception&) {
                throw ConfigError("bad domain '" + s + "': expected art:<1..14>");
            }
            if (id < 1 || id > 14) throw ConfigError("bad domain '" + s + "': art style ids are 1..14");
            return {Kind::art, id};
        }
        throw ConfigError("unknown domain '" + s + "' (expected natural, art, art:<id> or all)");
    }

    std::string str() const {
        switch (kind) {
            case Kind::natural: return "natural";
            case Kind::art: return "art:" + std::to_string(style);
            case Kind::art_all: return "art";
            case Kind::all: return "all";
        }
        return "?";
    }

    int category_for(std::size_t index, Rng& rng) const {
        switch (kind) {
            case Kind::natural: return 15 + static_cast<int>(rng.below(5));
            case Kind::art: return style;
            case Kind::art_all: return 1 + static_cast<int>(rng.below(14));
            case Kind::all: return 1 + static_cast<int>(index % 19);
        }
        return 15;
    }
};

struct SynthConfig {
    std::size_t width = 128;
    std::size_t height = 160;
};

struct SynthSample {
    Image image;
    PersonInstance person;
};

namespace synth_detail {

using Color = std::array<double, 3>;
struct Pt {
    double x, y;
};

// Limb segments: (from keypoint, to keypoint). Every segment has its own colour
// so left and right sides are distinguishable in the natural domain.
inline const std::vector<std::pair<int, int>>& limbs() {
    static const std::vector<std::pair<int, int>> l{{5, 7},  {7, 9},   {6, 8},  {8, 10}, {11, 13}, {13, 15},
                                                    {12, 14}, {14, 16}, {5, 6}, {11, 12}, {5, 11}, {6, 12}};
    return l;
}

inline const std::vector<Color>& base_palette() {
    static const std::vector<Color> p{{230, 40, 40},  {250, 150, 30}, {40, 90, 230},  {30, 200, 230},
                                      {40, 200, 60},  {200, 230, 40}, {170, 60, 220}, {240, 90, 200},
                                      {235, 235, 235}, {150, 110, 70}, {120, 240, 170}, {90, 140, 255}};
    return p;
}

struct Canvas {
    std::size_t w, h;
    std::vector<double> px;  // RGB, row-major
    Canvas(std::size_t w_, std::size_t h_) : w(w_), h(h_), px(w_ * h_ * 3, 0.0) {}
    double& at(std::size_t x, std::size_t y, std::size_t c) { return px[(y * w + x) * 3 + c]; }

    void blend(std::size_t x, std::size_t y, const Color& col, double a) {
        for (std::size_t c = 0; c < 3; ++c) at(x, y, c) = at(x, y, c) * (1 - a) + col[c] * a;
    }

    /// Thick anti-aliased segment; `keep` filters individual pixels (limb dropout).
    template <typename Keep>
    void segment(Pt a, Pt b, double width, const Color& col, Keep&& keep) {
        const double r = width / 2;
        const long x0 = std::max(0L, long(std::floor(std::min(a.x, b.x) - r - 1)));
        const long x1 = std::min(long(w) - 1, long(std::ceil(std::max(a.x, b.x) + r + 1)));
        const long y0 = std::max(0L, long(std::floor(std::min(a.y, b.y) - r - 1)));
        const long y1 = std::min(long(h) - 1, long(std::ceil(std::max(a.y, b.y) + r + 1)));
        const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
        for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
                double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double ex = a.x + t * dx - x, ey = a.y + t * dy - y;
                const double cov = std::clamp(r + 0.5 - std::sqrt(ex * ex + ey * ey), 0.0, 1.0);
                if (cov > 0 && keep(std::size_t(x), std::size_t(y))) blend(std::size_t(x), std::size_t(y), col, cov);
            }
    }

    void disc(Pt c, double radius, const Color& col) {
        segment(c, c, 2 * radius, col, [](std::size_t, std::size_t) { return true; });
    }

    Image to_image() const {
        Image img(w, h, 3);
        for (std::size_t i = 0; i < px.size(); ++i)
            img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(px[i]), 0L, 255L));
        return img;
    }
};

/// Per-style rendering parameters. Styles alter colour, stroke, geometry and
/// background deterministically so each art category has a consistent look.
struct Style {
    double stroke_scale = 1.0;
    double shear = 0.0;
    double dropout = 0.0;        // probability a limb pixel is skipped (per 2x2 cell)
    bool invert = false;
    bool grayscale = false;
    bool silhouette = false;     // every limb the same dark colour
    bool outline = false;        // dark outline under each limb
    bool stripes = false;
    bool flat_ground = false;         // light flat background
    double contrast = 1.0;       // limb colour pulled toward the background
    int palette_shift = 0;       // cyclic permutation of limb colours
    double noise = 18.0;
};

inline Style style_for(int category) {
    Style s;
    switch (category) {
        case 1: s.stroke_scale = 1.9; s.palette_shift = 3; s.flat_ground = true; break;                 // cartoon
        case 2: s.palette_shift = 5; s.stripes = true; break;                                     // digital art
        case 3: s.grayscale = true; s.flat_ground = true; s.stroke_scale = 1.4; s.dropout = 0.25; break; // ink painting
        case 4: s.stroke_scale = 0.6; s.flat_ground = true; s.shear = 0.18; s.palette_shift = 7; break;  // kids drawing
        case 5: s.stripes = true; s.contrast = 0.6; s.palette_shift = 2; break;                   // mural
        case 6: s.noise = 55; s.contrast = 0.7; s.stroke_scale = 1.5; break;                      // oil painting
        case 7: s.silhouette = true; s.flat_ground = true; s.stroke_scale = 1.6; break;                 // shadow play
        case 8: s.grayscale = true; s.flat_ground = true; s.stroke_scale = 0.55; s.dropout = 0.35; break; // sketch
        case 9: s.outline = true; s.palette_shift = 6; s.stroke_scale = 1.7; break;               // stained glass
        case 10: s.shear = -0.25; s.palette_shift = 9; s.flat_ground = true; break;                     // ukiyoe
        case 11: s.contrast = 0.4; s.flat_ground = true; s.stroke_scale = 1.6; break;                   // watercolor
        case 12: s.invert = true; s.stroke_scale = 1.3; break;                                    // garage kits
        case 13: s.grayscale = true; s.invert = true; s.stripes = true; break;                    // relief
        case 14: s.grayscale = true; s.shear = 0.22; s.noise = 40; break;                         // sculpture
        default: break;                                                                            // natural photos
    }
    return s;
}

}  // namespace synth_detail

/// Renders one stick-figure person with 17 COCO-ordered keypoints.
inline SynthSample render_person(int category, Rng& rng, const SynthConfig& cfg = {}) {
    using namespace synth_detail;
    PromptRegistry::lookup(category);  // validates the id
    const Style st = style_for(category);
    const double W = double(cfg.width), H = double(cfg.height);
    constexpr double pi = std::numbers::pi;

    // Acrobatics and dance poses swing the limbs further.
    const double swing = category == 15 ? 1.6 : category == 17 ? 1.3 : 1.0;
    const double height = rng.uniform(0.55, 0.8) * H;
    const double u = height / 7.0;  // body unit
    const double lean = rng.uniform(-0.15, 0.15);
    const double head_r = 0.45 * u;
    const double torso = 2.3 * u, shoulder = rng.uniform(1.5, 1.9) * u, hipw = rng.uniform(0.9, 1.2) * u;
    const double upper_arm = 1.25 * u, fore_arm = 1.1 * u, thigh = 1.6 * u, shin = 1.5 * u;
    auto dir = [](double a) { return Pt{std::sin(a), std::cos(a)}; };  // angle 0 points down
    auto add = [](Pt p, Pt d, double s) { return Pt{p.x + d.x * s, p.y + d.y * s}; };

    std::array<Pt, kNumKeypoints> kp{};
    Pt neck{0, 0};
    const Pt down = dir(lean), across{std::cos(lean), -std::sin(lean)};
    const Pt pelvis = add(neck, down, torso);
    const Pt head = add(neck, down, -1.0 * u);
    kp[0] = add(head, down, 0.1 * u);
    kp[1] = add(add(head, across, 0.22 * u), down, -0.15 * u);
    kp[2] = add(add(head, across, -0.22 * u), down, -0.15 * u);
    kp[3] = add(head, across, 0.45 * u);
    kp[4] = add(head, across, -0.45 * u);
    kp[5] = add(neck, across, shoulder / 2);
    kp[6] = add(neck, across, -shoulder / 2);
    kp[11] = add(pelvis, across, hipw / 2);
    kp[12] = add(pelvis, across, -hipw / 2);
    // Person's left appears on the image right (frontal view).
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? -1.0 : 1.0;  // left limbs bend toward -angle
        const double a1 = lean - sgn * rng.uniform(0.15, 1.3) * swing;
        const double a2 = a1 - sgn * rng.uniform(-0.4, 1.6) * swing;
        const std::size_t sh = side == 0 ? 5 : 6, el = side == 0 ? 7 : 8, wr = side == 0 ? 9 : 10;
        kp[el] = add(kp[sh], dir(a1), upper_arm);
        kp[wr] = add(kp[el], dir(a2), fore_arm);
        const double b1 = lean - sgn * rng.uniform(-0.05, 0.5) * swing;
        const double b2 = b1 + sgn * rng.uniform(0.0, 0.7) * swing;
        const std::size_t hp = side == 0 ? 11 : 12, kn = side == 0 ? 13 : 14, an = side == 0 ? 15 : 16;
        kp[kn] = add(kp[hp], dir(b1), thigh);
        kp[an] = add(kp[kn], dir(b2), shin);
    }
    // Style shear about the neck, then place the figure inside the frame.
    for (auto& p : kp) p.x += st.shear * p.y;
    const Pt hd{head.x + st.shear * head.y, head.y};
    double minx = hd.x - head_r, maxx = hd.x + head_r, miny = hd.y - head_r, maxy = hd.y + head_r;
    for (const auto& p : kp) {
        minx = std::min(minx, p.x), maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y), maxy = std::max(maxy, p.y);
    }
    const double margin = 4.0;
    const double spanx = maxx - minx, spany = maxy - miny;
    const double fit = std::min({1.0, (W - 2 * margin) / spanx, (H - 2 * margin) / spany});
    const double ox = rng.uniform(margin, std::max(margin, W - margin - spanx * fit)) - minx * fit;
    const double oy = rng.uniform(margin, std::max(margin, H - margin - spany * fit)) - miny * fit;
    auto place = [&](Pt p) { return Pt{p.x * fit + ox, p.y * fit + oy}; };
    for (auto& p : kp) p = place(p);
    const Pt head_c = place(hd);
    const double scale = fit;

    // Background.
    Canvas cv(cfg.width, cfg.height);
    const Color bg = st.flat_ground ? Color{225, 215, 195} : Color{rng.uniform(70, 130), rng.uniform(70, 130), rng.uniform(70, 130)};
    const double phase = rng.uniform(0, 2 * pi), freq = rng.uniform(0.25, 0.45);
    for (std::size_t y = 0; y < cfg.height; ++y)
        for (std::size_t x = 0; x < cfg.width; ++x) {
            const double stripe = st.stripes ? 45.0 * std::sin(freq * (double(x) + 0.6 * double(y)) + phase) : 0.0;
            for (std::size_t c = 0; c < 3; ++c) cv.at(x, y, c) = bg[c] + stripe + st.noise * (rng.uniform() * 2 - 1);
        }

    // Figure.
    const auto& pal = base_palette();
    Rng drop = rng.fork(0xd20b);
    std::vector<std::uint8_t> keep_cell((cfg.width / 2 + 1) * (cfg.height / 2 + 1));
    for (auto& k : keep_cell) k = drop.uniform() >= st.dropout;
    auto keep = [&](std::size_t x, std::size_t y) { return keep_cell[(y / 2) * (cfg.width / 2 + 1) + x / 2] != 0; };
    auto style_color = [&](Color c) {
        if (st.silhouette) c = {25, 20, 20};
        if (st.grayscale) {
            const double g = 0.3 * c[0] + 0.59 * c[1] + 0.11 * c[2];
            c = {g * 0.45, g * 0.45, g * 0.45};
        }
        for (std::size_t i = 0; i < 3; ++i) c[i] = bg[i] + (c[i] - bg[i]) * st.contrast;
        return c;
    };
    const double stroke = rng.uniform(2.6, 3.6) * st.stroke_scale * scale;
    const auto& L = limbs();
    for (std::size_t i = 0; i < L.size(); ++i) {
        const Pt a = kp[std::size_t(L[i].first)], b = kp[std::size_t(L[i].second)];
        if (st.outline) cv.segment(a, b, stroke + 3, Color{15, 15, 15}, keep);
        const Color col = style_color(pal[(i + std::size_t(st.palette_shift)) % pal.size()]);
        cv.segment(a, b, stroke, col, keep);
    }
    const Pt neck_p = Pt{(kp[5].x + kp[6].x) / 2, (kp[5].y + kp[6].y) / 2};
    cv.segment(neck_p, head_c, stroke, style_color({200, 160, 130}), keep);
    cv.disc(head_c, head_r * scale, style_color({235, 190, 150}));
    cv.disc(kp[0], 1.3 * scale, style_color({200, 30, 30}));
    cv.disc(kp[1], 1.1 * scale, style_color({20, 20, 120}));
    cv.disc(kp[2], 1.1 * scale, style_color({20, 120, 20}));
    cv.disc(kp[3], 1.4 * scale, style_color({120, 60, 10}));
    cv.disc(kp[4], 1.4 * scale, style_color({60, 10, 120}));
    if (st.invert)
        for (auto& v : cv.px) v = 255.0 - std::clamp(v, 0.0, 255.0);

    SynthSample s;
    s.image = cv.to_image();
    s.person.category_id = category;
    double bx0 = W, by0 = H, bx1 = 0, by1 = 0;
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        const double x = std::clamp(kp[k].x, 0.0, W - 1), y = std::clamp(kp[k].y, 0.0, H - 1);
        s.person.keypoints.push_back({x, y, 2});
        bx0 = std::min(bx0, x), by0 = std::min(by0, y), bx1 = std::max(bx1, x), by1 = std::max(by1, y);
    }
    by0 = std::min(by0, head_c.y - head_r * scale);
    const double pad = 0.08 * std::max(bx1 - bx0, by1 - by0);
    bx0 = std::max(0.0, bx0 - pad), by0 = std::max(0.0, by0 - pad);
    bx1 = std::min(W, bx1 + pad), by1 = std::min(H, by1 + pad);
    s.person.bbox = {bx0, by0, bx1 - bx0, by1 - by0};
    s.person.area = s.person.bbox.w * s.person.bbox.h;
    return s;
}

struct SynthSet {
    Dataset dataset;
    std::vector<Image> images;  // parallel to dataset.images
};

/// n images with one person each. Output depends only on (domain, n, seed).
inline SynthSet synth_dataset(const SynthDomain& domain, std::size_t n, std::uint64_t seed, const SynthConfig& cfg = {}) {
    if (n == 0) throw ConfigError("synth_dataset: n must be at least 1");
    SynthSet set;
    for (const auto& e : PromptRegistry::entries()) set.dataset.categories[e.id] = std::string(e.category);
    Rng root(hash_combine(seed, fnv1a(domain.str())));
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.fork(i);
        const int cat = domain.category_for(i, rng);
        SynthSample s = render_person(cat, rng, cfg);
        const auto id = static_cast<std::int64_t>(i + 1);
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.ppm", i + 1);
        set.dataset.images.push_back({id, cfg.width, cfg.height, name});
        s.person.id = id;
        s.person.image_id = id;
        set.dataset.annotations.push_back(s.person);
        set.images.push_back(std::move(s.image));
    }
    return set;
}

/// Writes images plus annotations.json into `dir`.
inline void save_synth_set(const std::filesystem::path& dir, const SynthSet& set) {
    std::filesystem::create_directories(dir / "images");
    for (std::size_t i = 0; i < set.images.size(); ++i) write_pnm(dir / "images" / set.dataset.images[i].file_name, set.images[i]);
    save_annotations(dir / "annotations.json", set.dataset);
}

/// Loads a directory written by save_synth_set (or any dataset with PPM/PGM
/// images under `dir/images`). `annotations` defaults to `dir/annotations.json`.
inline SynthSet load_image_set(const std::filesystem::path& dir, const std::filesystem::path& annotations = {}) {
    SynthSet set;
    set.dataset = load_annotations(annotations.empty() ? dir / "annotations.json" : annotations);
    for (const auto& im : set.dataset.images) {
        Image img = read_pnm(dir / "images" / im.file_name);
        if (img.width != im.width || img.height != im.height)
            throw ParseError(im.file_name + ": size differs from the annotation record");
        set.images.push_back(std::move(img));
    }
    return set;
}

}  // namespace vlpose
