// One pass/fail line per acceptance criterion. Usage: vlpose_acceptance <1..8>
#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "eval_oracle.hpp"
#include "fixtures.hpp"
#include "grad_suite.hpp"
#include "matcher_oracle.hpp"
#include "vlpose/cli.hpp"

using namespace vlpose;
using namespace vlpose::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Checker {
public:
    void require(bool ok, const std::string& what) {
        if (!ok && fails_.size() < 10) fails_.push_back(what);
        failed_ = failed_ || !ok;
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
    Outcome outcome() const {
        Outcome o{!failed_, notes_};
        for (const auto& f : fails_) o.detail += (o.detail.empty() ? "" : "; ") + std::string("failed: ") + f;
        return o;
    }

private:
    bool failed_ = false;
    std::vector<std::string> fails_;
    std::string notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string num(double v, const char* f = "%.4g") { return cli::fmt(f, v); }

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
    Checker c;
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    std::size_t checks = 0;
    for (const auto& g : all_grad_cases())
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto r = g.run(seed);
            worst = std::max(worst, r.max_rel_err);
            c.require(r.passed && r.max_rel_err <= 1e-3, g.name + " seed " + std::to_string(seed) + " " + r.summary());
            ++checks;
        }
    const double secs = seconds_since(t0);
    c.require(secs <= 120, "runtime " + num(secs) + " s > 120 s");
    c.note(std::to_string(checks) + " checks, max rel err " + num(worst) + ", " + num(secs, "%.1f") + " s");
    return c.outcome();
}

// Zeroes every auxiliary parameter, so each auxiliary block outputs zero.
void zero_aux(ParamSet<D>& ps) {
    for (const auto& [name, e] : ps.entries())
        if (e.group == "decoder.aux") Var<D>(e.var).mutable_value().fill(0.0);
}

Outcome reversibility() {
    Checker c;
    double worst = 0;
    for (std::size_t wi = 0; wi < decoder_names().size(); ++wi) {
        const std::string& name = decoder_names()[wi];
        if (name == "Baseline") continue;
        ParamSet<D> ps;
        Rng rng(hash_combine(21, wi));
        DecoderConfig dc;
        dc.channels = 16;
        dc.keypoints = 5;
        dc.grid_h = 4;
        dc.grid_w = 3;
        dc.wiring = name;
        PoseDecoder<D> d(ps, dc, rng);
        randomize_norms(ps, rng);
        zero_aux(ps);
        const auto refs = branch_refs(d);
        for (int i = 0; i < 100; ++i) {
            Var<D> E(random_tensor<D>({2, 12, 16}, rng)), R(Tensor<D>({2, 12, 16}));
            const auto base = decode_baseline(refs, E).value();
            double dev = max_abs_diff(d.forward(E, R).value(), base);
            if (name == "First") dev = std::max(dev, max_abs_diff(decode_injector(refs, E, R).value(), base));
            if (name == "First-Final") dev = std::max(dev, max_abs_diff(decode_extractor_injector(refs, E, R).value(), base));
            if (name == "First-AMiddle-Final") dev = std::max(dev, max_abs_diff(decode_dual(refs, E, R).value(), base));
            worst = std::max(worst, dev);
            c.require(dev <= 1e-6, name + " input " + std::to_string(i) + " deviates by " + num(dev));
        }
    }
    c.note("11 wirings x 100 inputs, max abs dev " + num(worst));

    // End to end through the command-line entry points.
    const fs::path dir = scratch_dir("acceptance_2");
    std::ostringstream out, err;
    const cli::Context ctx{dir, &out, &err};
    const std::vector<std::string> tiny{"input_h=32", "input_w=32", "channels=8", "depth=1", "heads=2", "matcher_heads=2",
                                        "text_dim=6", "text_len=4", "steps=40", "batch=4", "tune_steps=40"};
    bool ok = cli::cmd_gen({"natural", 16, 1, "natural"}, ctx) == 0 && cli::cmd_gen({"art", 16, 2, "art"}, ctx) == 0;
    cli::TrainArgs base;
    base.sets = tiny;
    base.matcher = "none";
    base.decoder = "Baseline";
    base.data = "natural";
    base.out = "base";
    ok = ok && cli::cmd_train(base, ctx) == 0;
    cli::TrainArgs tune;
    tune.sets = {"prompt_tokens=4", "matcher_heads=2", "text_dim=6", "text_len=4", "batch=4", "tune_steps=40"};
    tune.mode = "prompt_tune";
    tune.base = "base/checkpoint";
    tune.data = "art";
    tune.out = "tuned";
    ok = ok && cli::cmd_train(tune, ctx) == 0;
    cli::EvalArgs e;
    e.annotations = "natural";
    e.checkpoint = "base/checkpoint";
    e.out = "eval_base";
    ok = ok && cli::cmd_eval(e, ctx) == 0;
    e.checkpoint = "tuned/checkpoint";
    e.strip_prompts = true;
    e.out = "eval_strip";
    ok = ok && cli::cmd_eval(e, ctx) == 0;
    c.require(ok, "command pipeline: " + err.str());
    if (ok) {
        const std::string a = slurp(dir / "eval_base" / "metrics.csv"), b = slurp(dir / "eval_strip" / "metrics.csv");
        c.require(!a.empty() && a == b, "stripped metrics.csv differs from the pre-tuning checkpoint's");
        c.note("stripped metrics.csv byte-identical (" + std::to_string(a.size()) + " bytes)");
    }
    return c.outcome();
}

Outcome equation_pinning() {
    Checker c;
    for (const auto& [v, probs, out, label] :
         {std::tuple{MatcherVariant::E_T, kProbs_E_T, kOut_E_T, "[E, T]"}, std::tuple{MatcherVariant::T, kProbs_T, kOut_T, "T"}}) {
        const auto d = literal_matcher_deviation(v, probs, out);
        c.require(d.shapes_ok && d.probs <= 1e-6 && d.out <= 1e-6,
                  std::string("literal matcher ") + label + " deviates by " + num(std::max(d.probs, d.out)));
        c.note(std::string("literal ") + label + " max dev " + num(std::max(d.probs, d.out)));
    }
    const std::vector<std::pair<std::string, std::string>> pins{
        {"First", "injector"}, {"First-Final", "extractor_injector"}, {"First-AMiddle-Final", "dual"}};
    std::size_t draws = 0;
    for (const auto& [wiring, which] : pins)
        for (std::uint64_t draw = 0; draw < 100; ++draw) {
            ParamSet<float> ps;
            Rng rng(hash_combine(31, draw));
            DecoderConfig dc;
            dc.channels = 16;
            dc.keypoints = 5;
            dc.grid_h = 4;
            dc.grid_w = 3;
            dc.wiring = wiring;
            PoseDecoder<float> d(ps, dc, rng);
            randomize_norms(ps, rng);
            Var<float> E(random_tensor<float>({2, 12, 16}, rng)), R(random_tensor<float>({2, 12, 16}, rng));
            const DecoderRun run{draw % 2 == 1, draw % 2 == 1};
            const auto refs = branch_refs(d, run);
            Tensor<float> ref;
            if (which == "injector") ref = decode_injector(refs, E, R).value();
            else if (which == "extractor_injector") ref = decode_extractor_injector(refs, E, R).value();
            else ref = decode_dual(refs, E, R).value();
            c.require(d.forward(E, R, run).value() == ref, wiring + " differs from its closed form on draw " + std::to_string(draw));
            ++draws;
        }
    c.note(std::to_string(draws) + " weight draws bit-exact");
    return c.outcome();
}

Outcome shape_contract() {
    Checker c;
    std::size_t combos = 0;
    const std::vector<MatcherVariant> matchers{MatcherVariant::none, MatcherVariant::T, MatcherVariant::E_dot_T, MatcherVariant::E_T,
                                               MatcherVariant::concat_bypass};
    Rng rng(41);
    Var<float> img(random_tensor<float>({1, 3, 256, 192}, rng));
    for (std::size_t prompts : {0, 5, 10, 20, 50})
        for (MatcherVariant m : matchers)
            for (const auto& name : decoder_names()) {
                ModelConfig mc;
                mc.encoder.input_h = 256;
                mc.encoder.input_w = 192;
                mc.encoder.channels = 16;
                mc.encoder.depth = 1;
                mc.encoder.heads = 2;
                mc.encoder.mlp_ratio = 2;
                mc.encoder.prompt_tokens = prompts;
                mc.matcher = m;
                mc.matcher_heads = 2;
                mc.text_dim = 8;
                mc.decoder = name;
                const std::string tag = name + "/" + to_string(m) + "/" + std::to_string(prompts);
                try {
                    VLPoseModel<float> model(mc);
                    NoGradGuard ng;
                    const auto tokens = model.encoder().embed(img);
                    const auto E = model.encoder().forward(tokens, {false, true, nullptr});
                    c.require(tokens.shape() == Shape{1, 192, 16} && E.shape() == Shape{1, 192, 16}, tag + " token shape");
                    c.require(model.forward(img, {3}).shape() == Shape{1, 17, 64, 48}, tag + " heatmap shape");
                } catch (const std::exception& e) {
                    c.require(false, tag + ": " + e.what());
                }
                ++combos;
            }
    c.note(std::to_string(combos) + " configurations: P=192, heatmaps 17x64x48");
    return c.outcome();
}

Outcome evaluation_oracle() {
    Checker c;
    Rng rng(51);
    const Dataset ds = random_dataset(rng, 10, 5);
    const auto preds = random_predictions(ds, rng);
    const EvalConfig ec = EvalConfig::coco();
    double worst = 0;
    std::size_t pairs = 0, matchings = 0;
    for (const auto& im : ds.images) {
        std::vector<const Prediction*> d;
        for (const auto& p : preds)
            if (p.image_id == im.id) d.push_back(&p);
        std::vector<const PersonInstance*> g;
        for (const auto& a : ds.annotations)
            if (a.image_id == im.id && a.num_labeled() > 0) g.push_back(&a);
        std::vector<std::vector<double>> sims(d.size(), std::vector<double>(g.size()));
        for (std::size_t i = 0; i < d.size(); ++i)
            for (std::size_t j = 0; j < g.size(); ++j) {
                sims[i][j] = oks(d[i]->keypoints, *g[j], ec);
                const double dev = std::abs(sims[i][j] - brute_oks(*d[i], *g[j]));
                worst = std::max(worst, dev);
                c.require(dev <= 1e-9, "OKS image " + std::to_string(im.id));
                ++pairs;
            }
        for (double thr : ec.thresholds) {
            c.require(match_instances(sims, g.size(), thr) == brute_match(sims, g.size(), thr), "matching image " + std::to_string(im.id));
            ++matchings;
        }
    }
    const auto r = compute_metrics(ds, preds, ec);
    const auto b = brute_force(ds, preds);
    for (std::size_t t = 0; t < b.ap.size(); ++t) {
        c.require(std::abs(r.ap_per_threshold[t] - b.ap[t]) <= 1e-9, "AP at threshold " + std::to_string(t));
        c.require(std::abs(r.recall_per_threshold[t] - b.recall[t]) <= 1e-9, "recall at threshold " + std::to_string(t));
    }
    const auto perfect = compute_metrics(ds, oracle_predictions(ds), ec);
    c.require(perfect.ap == 1.0 && perfect.ar == 1.0, "perfect predictions score " + num(perfect.ap) + "/" + num(perfect.ar));

    // Hand-worked fixture: hit (0.9), miss (0.7), hit (0.5) over three people gives AP = 56/101.
    Rng frng(6);
    Dataset three;
    for (int i = 1; i <= 3; ++i) {
        three.images.push_back({i, 300, 300, ""});
        auto p = person(i, i, frng);
        for (auto& k : p.keypoints) k.v = 2;
        three.annotations.push_back(p);
    }
    three.categories[1] = "person";
    auto tp = oracle_predictions(three);
    tp[0].score = 0.9;
    tp[1].score = 0.5;
    tp[2].score = 0.7;
    for (auto& k : tp[2].keypoints) k.x += 500;
    const auto h = compute_metrics(three, tp, ec);
    c.require(std::abs(h.ap - 56.0 / 101.0) <= 1e-12, "hand-worked AP " + num(h.ap, "%.12f"));
    c.note(std::to_string(ds.annotations.size()) + " instances, " + std::to_string(pairs) + " OKS pairs (max dev " + num(worst) +
           "), " + std::to_string(matchings) + " matchings; hand-worked AP " + num(h.ap, "%.6f"));
    return c.outcome();
}

// Trainable set of each mode, restated from the finetuning rules.
bool declared_trainable(const std::string& group, FinetuneMode mode, std::size_t depth) {
    switch (mode) {
        case FinetuneMode::full: return true;
        case FinetuneMode::visual_prompt: return group == "encoder.prompt" || group == "matcher" || group == "decoder.aux";
        case FinetuneMode::last_layer:
            return (depth > 0 && group == "encoder.layer." + std::to_string(depth - 1)) || group == "decoder.main" ||
                   group == "decoder.predictor";
    }
    return false;
}

Outcome freeze_accounting() {
    Checker c;
    {
        VLPoseModel<float> model(tiny_model(3));
        model.apply_trainable_mask(FinetuneMode::visual_prompt);
        const auto& ps = model.params();
        std::map<std::string, Tensor<float>> before;
        for (const auto& [n, e] : ps.entries()) before[n] = e.var.value();
        const PreparedSet data = prepare_set(synth_dataset(SynthDomain::parse("all"), 12, 9), 32, 32, 17);
        TrainConfig tc;
        tc.steps = 200;
        tc.batch = 4;
        tc.lr = 1e-2;
        const auto r = train_loop(model, data, tc);
        c.require(!r.diverged && r.steps_done == 200, "training ran " + std::to_string(r.steps_done) + " steps");
        std::set<std::string> changed, declared;
        for (const auto& [n, e] : ps.entries()) {
            if (!(e.var.value() == before[n])) changed.insert(n);
            if (declared_trainable(e.group, FinetuneMode::visual_prompt, model.config().encoder.depth)) declared.insert(n);
        }
        for (const auto& n : changed)
            if (!declared.count(n)) c.require(false, "frozen parameter changed: " + n);
        for (const auto& n : declared)
            if (!changed.count(n)) c.require(false, "trainable parameter unchanged: " + n);
        c.note(std::to_string(changed.size()) + " of " + std::to_string(ps.entries().size()) +
               " tensors changed, all in the declared trainable set");
    }
    const std::vector<ModelConfig> configs{tiny_model(0, "Baseline", MatcherVariant::none), tiny_model(2),
                                           tiny_model(5, "First-Final", MatcherVariant::T),
                                           [] {
                                               ModelConfig m = tiny_model(4, "AFirst-Middle", MatcherVariant::concat_bypass);
                                               m.encoder.insertion = PromptInsertion::deep;
                                               m.encoder.depth = 3;
                                               return m;
                                           }()};
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (FinetuneMode mode : {FinetuneMode::full, FinetuneMode::visual_prompt, FinetuneMode::last_layer}) {
            VLPoseModel<float> model(configs[i]);
            model.apply_trainable_mask(mode);
            std::size_t all = 0, trainable = 0;
            for (const auto& [n, e] : model.params().entries()) {
                std::size_t numel = 1;
                for (std::size_t s : e.var.shape()) numel *= s;
                all += numel;
                if (declared_trainable(e.group, mode, configs[i].encoder.depth)) trainable += numel;
            }
            const auto& ps = model.params();
            const std::string tag = "config " + std::to_string(i) + " " + to_string(mode);
            c.require(count_params(ps).total == all, tag + " total");
            c.require(count_params(ps, CountFilter::trainable).total == trainable, tag + " trainable");
            c.require(count_params(ps, CountFilter::frozen).total == all - trainable, tag + " frozen");
        }
    c.note("count_params equals enumeration for 4 configs x 3 modes");
    return c.outcome();
}

double overall_ap(const fs::path& metrics_json) {
    return nlohmann::json::parse(slurp(metrics_json))["overall"]["AP"].get<double>();
}

Outcome domain_gap() {
    Checker c;
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = scratch_dir("acceptance_7");
    std::ostringstream out, err;
    const cli::Context ctx{dir, &out, &err};
    const std::string configs = std::string(VLPOSE_SOURCE_DIR) + "/configs/";
    auto step = [&](const std::string& what, int code) {
        c.require(code == 0, what + ": " + err.str());
        return code == 0;
    };
    bool ok = step("gen", cli::cmd_gen({"natural", 400, 1, "nat_train"}, ctx)) && step("gen", cli::cmd_gen({"natural", 100, 2, "nat_val"}, ctx)) &&
              step("gen", cli::cmd_gen({"art", 400, 3, "art_train"}, ctx)) && step("gen", cli::cmd_gen({"art", 140, 4, "art_val"}, ctx));
    cli::TrainArgs base;
    base.config = configs + "desk.cfg";
    base.matcher = "none";
    base.decoder = "Baseline";
    base.data = "nat_train";
    base.out = "base";
    ok = ok && step("train baseline", cli::cmd_train(base, ctx));
    cli::TrainArgs tune;
    tune.config = configs + "tune.cfg";
    tune.mode = "prompt_tune";
    tune.base = "base/checkpoint";
    tune.data = "art_train";
    tune.out = "tuned";
    ok = ok && step("prompt-tune", cli::cmd_train(tune, ctx));
    auto eval = [&](const std::string& ckpt, const std::string& data, bool strip, const std::string& o) {
        cli::EvalArgs e;
        e.checkpoint = ckpt;
        e.annotations = data;
        e.strip_prompts = strip;
        e.out = o;
        return step("eval " + o, cli::cmd_eval(e, ctx));
    };
    ok = ok && eval("base/checkpoint", "nat_val", false, "base_nat") && eval("base/checkpoint", "art_val", false, "base_art") &&
         eval("tuned/checkpoint", "art_val", false, "tuned_art") && eval("tuned/checkpoint", "nat_val", true, "strip_nat");
    if (ok) {
        const double nat = overall_ap(dir / "base_nat" / "metrics.json"), art = overall_ap(dir / "base_art" / "metrics.json"),
                     tuned = overall_ap(dir / "tuned_art" / "metrics.json");
        const double gap = 100 * (nat - art), gain = 100 * (tuned - art);
        c.require(gap >= 10, "domain gap " + num(gap) + " points < 10");
        c.require(gain >= 5, "prompt-tuning gain " + num(gain) + " points < 5");
        c.require(slurp(dir / "base_nat" / "metrics.csv") == slurp(dir / "strip_nat" / "metrics.csv"),
                  "stripped natural metrics.csv differs from the baseline's");
        c.note("natural AP " + num(100 * nat, "%.2f") + ", art AP " + num(100 * art, "%.2f") + " (gap " + num(gap, "%.2f") +
               "), tuned art AP " + num(100 * tuned, "%.2f") + " (gain " + num(gain, "%.2f") + "), stripped natural CSV byte-identical");
    }
    const double secs = seconds_since(t0);
    c.require(secs <= 900, "runtime " + num(secs) + " s > 900 s");
    c.note(num(secs, "%.0f") + " s");
    return c.outcome();
}

// Splits one CSV line, honouring double quotes.
std::vector<std::string> csv_fields(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') quoted = !quoted;
        else if (ch == ',' && !quoted) out.emplace_back();
        else out.back() += ch;
    }
    return out;
}

Outcome ablation_harness() {
    Checker c;
    const fs::path dir = scratch_dir("acceptance_8");
    std::ostringstream out, err;
    const cli::Context ctx{dir, &out, &err};
    cli::AblateArgs a;
    a.sets = {"input_h=32", "input_w=32", "channels=8", "depth=1", "heads=2", "matcher_heads=2", "text_dim=6",
              "text_len=4", "steps=10",   "batch=4",    "tune_steps=10", "prompt_tokens=2"};
    a.n_pretrain = a.n_tune = a.n_eval = 8;
    a.out = "ablate";
    if (cli::cmd_ablate(a, ctx) != 0) {
        c.require(false, "cmd_ablate: " + err.str());
        return c.outcome();
    }
    const std::string metrics = "AP,AP50,AP75,AR,AR50";
    std::vector<std::string> wirings;
    for (const auto& n : decoder_names()) wirings.push_back(n);
    const std::vector<std::tuple<std::string, std::string, std::vector<std::string>>> golden{
        {"table_a_matcher", "K=V," + metrics, {"w/o text", "w/o matcher", "w matcher"}},
        {"table_c_attention_input", "K=V," + metrics, {"None", "T", "\"[E, E·T]\"", "\"[E, T]\""}},
        {"table_d_prompt", "Prompt," + metrics, {"None", "Random", "Fixed prompt", "Style prompt"}},
        {"table_e_decoder", "Model," + metrics, {"None", "in", "ex-in", "2-ex-in"}},
        {"table_f_finetune",
         "Model,Finetune,Small,Base,Large,Huge",
         {"ViTPose,-", "ViTPose,5 tokens", "ViTPose,10 tokens", "ViTPose,20 tokens", "ViTPose,50 tokens", "ViTPose,last layer",
          "VLPose,visual prompt"}},
        {"table_decoder_wirings", "model," + metrics, wirings}};
    for (const auto& [name, header, rows] : golden) {
        std::istringstream is(slurp(dir / "ablate" / (name + ".csv")));
        std::vector<std::string> lines;
        for (std::string l; std::getline(is, l);) lines.push_back(l);
        c.require(lines.size() == rows.size() + 1, name + ": " + std::to_string(lines.size()) + " lines");
        if (lines.empty()) continue;
        c.require(lines[0] == header, name + " header '" + lines[0] + "'");
        const std::size_t cols = csv_fields(header).size();
        for (std::size_t i = 0; i < rows.size() && i + 1 < lines.size(); ++i) {
            const std::string& l = lines[i + 1];
            c.require(l.rfind(rows[i] + ",", 0) == 0, name + " row " + std::to_string(i) + " '" + l + "'");
            const auto fields = csv_fields(l);
            const std::size_t labels = csv_fields(rows[i]).size();
            c.require(fields.size() == cols, name + " row " + std::to_string(i) + " has " + std::to_string(fields.size()) + " cells");
            for (std::size_t f = labels; f < fields.size(); ++f) {
                char* end = nullptr;
                std::strtod(fields[f].c_str(), &end);
                c.require(!fields[f].empty() && *end == '\0', name + " non-numeric cell '" + fields[f] + "'");
            }
        }
    }
    c.note("6 tables with golden headers and row labels");
    return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},         {"reversibility", reversibility},
        {"equation pinning", equation_pinning},     {"shape contract", shape_contract},
        {"evaluation oracle", evaluation_oracle},   {"freeze and accounting", freeze_accounting},
        {"desk-scale domain gap", domain_gap},      {"ablation harness", ablation_harness}};
    std::vector<std::size_t> which;
    if (argc < 2) {
        for (std::size_t i = 1; i <= criteria.size(); ++i) which.push_back(i);
    } else {
        for (int i = 1; i < argc; ++i) {
            const int n = std::atoi(argv[i]);
            if (n < 1 || n > int(criteria.size())) {
                std::cerr << "usage: vlpose_acceptance [1..8]...\n";
                return 2;
            }
            which.push_back(std::size_t(n));
        }
    }
    bool all = true;
    for (std::size_t n : which) {
        Outcome o;
        try {
            o = criteria[n - 1].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << n << " (" << criteria[n - 1].first << "): " << o.detail
                  << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
