#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "vlpose/cli.hpp"

using namespace vlpose;
using namespace vlpose::cli;
using namespace vlpose::testing;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Session {
    fs::path dir;
    std::ostringstream out, err;
    explicit Session(const std::string& name) : dir(scratch_dir("cli_" + name)) {}
    Context ctx() { return {dir, &out, &err}; }
};

// Tiny backbone so each training run takes well under a second.
const std::vector<std::string> kTiny{"input_h=32", "input_w=32", "channels=8", "depth=1",   "heads=2",
                                     "matcher_heads=2", "text_dim=6", "text_len=4", "steps=20", "batch=4",
                                     "tune_steps=20"};

TEST(CliGen, DeterministicAndDomainSelectable) {
    Session s("gen");
    EXPECT_EQ(cmd_gen({"art:10", 4, 7, "a"}, s.ctx()), 0);
    EXPECT_EQ(cmd_gen({"art:10", 4, 7, "b"}, s.ctx()), 0);
    EXPECT_EQ(slurp(s.dir / "a" / "annotations.json"), slurp(s.dir / "b" / "annotations.json"));
    const SynthSet a = load_image_set(s.dir / "a"), b = load_image_set(s.dir / "b");
    EXPECT_EQ(a.images, b.images);
    for (const auto& g : a.dataset.annotations) EXPECT_EQ(g.category_id, 10);
    EXPECT_NE(slurp(s.dir / "a" / "gen_config.txt").find("seed = 7"), std::string::npos);
    EXPECT_EQ(cmd_gen({"paint", 4, 7, "c"}, s.ctx()), 1);
    EXPECT_EQ(cmd_gen({"art", 4, 7, ""}, s.ctx()), 1);
}

TEST(CliGen, SeedFallsBackToEnvironment) {
    Session s("gen_env");
    ::setenv("VLPOSE_SEED", "7", 1);
    EXPECT_EQ(cmd_gen({"natural", 3, std::nullopt, "env"}, s.ctx()), 0);
    ::unsetenv("VLPOSE_SEED");
    EXPECT_EQ(cmd_gen({"natural", 3, 7, "flag"}, s.ctx()), 0);
    EXPECT_EQ(slurp(s.dir / "env" / "annotations.json"), slurp(s.dir / "flag" / "annotations.json"));
}

TEST(CliTrain, UnknownDecoderListsEveryName) {
    Session s("bad_decoder");
    cmd_gen({"natural", 4, 1, "data"}, s.ctx());
    TrainArgs a;
    a.sets = kTiny;
    a.decoder = "Sideways";
    a.data = "data";
    a.out = "run";
    EXPECT_EQ(cmd_train(a, s.ctx()), 1);
    for (const auto& n : decoder_names()) EXPECT_NE(s.err.str().find(n), std::string::npos) << n;
}

TEST(CliTrain, RejectsInvalidRequests) {
    Session s("bad_train");
    TrainArgs a;
    a.sets = kTiny;
    a.out = "run";
    EXPECT_EQ(cmd_train(a, s.ctx()), 1);  // no data
    a.data = "missing";
    a.mode = "finetune";
    EXPECT_EQ(cmd_train(a, s.ctx()), 1);
    a.mode = "prompt_tune";
    EXPECT_EQ(cmd_train(a, s.ctx()), 1);  // no base
    a.mode = "scratch";
    a.sets.push_back("nonsense=1");
    EXPECT_EQ(cmd_train(a, s.ctx()), 1);
    EXPECT_NE(s.err.str().find("nonsense"), std::string::npos);
}

TEST(CliEval, OraclePredictionsScorePerfectly) {
    Session s("eval_oracle");
    ASSERT_EQ(cmd_gen({"all", 6, 2, "data"}, s.ctx()), 0);
    save_results(s.dir / "oracle.json", oracle_predictions(load_annotations(s.dir / "data" / "annotations.json")));
    EvalArgs e;
    e.annotations = "data";
    e.results = "oracle.json";
    e.out = "metrics";
    ASSERT_EQ(cmd_eval(e, s.ctx()), 0) << s.err.str();
    EXPECT_NE(s.out.str().find("AP 1.0000"), std::string::npos) << s.out.str();
    EXPECT_NE(slurp(s.dir / "metrics" / "metrics.csv").find("AP,"), std::string::npos);
    EXPECT_TRUE(nlohmann::json::parse(slurp(s.dir / "metrics" / "metrics.json")).contains("overall"));
}

TEST(CliEval, KeypointCountMismatchIsAUsageError) {
    Session s("eval_k");
    cmd_gen({"natural", 2, 3, "data"}, s.ctx());
    auto preds = oracle_predictions(load_annotations(s.dir / "data" / "annotations.json"));
    preds[0].keypoints.pop_back();
    save_results(s.dir / "short.json", preds);
    EvalArgs e;
    e.annotations = "data";
    e.results = "short.json";
    e.out = "m";
    EXPECT_EQ(cmd_eval(e, s.ctx()), 1);
    EXPECT_NE(s.err.str().find("keypoints"), std::string::npos);
    e.checkpoint = "ckpt";
    EXPECT_EQ(cmd_eval(e, s.ctx()), 1);  // both sources given
}

TEST(CliPipeline, StrippedTunedCheckpointReproducesBaselineMetrics) {
    Session s("pipeline");
    ASSERT_EQ(cmd_gen({"natural", 8, 1, "natural"}, s.ctx()), 0);
    ASSERT_EQ(cmd_gen({"art", 8, 2, "art"}, s.ctx()), 0);
    TrainArgs base;
    base.sets = kTiny;
    base.matcher = "none";
    base.decoder = "Baseline";
    base.data = "natural";
    base.out = "base";
    ASSERT_EQ(cmd_train(base, s.ctx()), 0) << s.err.str();
    TrainArgs tune;
    tune.sets = {"prompt_tokens=3", "matcher_heads=2", "text_dim=6", "text_len=4", "batch=4", "tune_steps=20"};
    tune.mode = "prompt_tune";
    tune.base = "base/checkpoint";
    tune.data = "art";
    tune.out = "tuned";
    ASSERT_EQ(cmd_train(tune, s.ctx()), 0) << s.err.str();
    EXPECT_NE(s.out.str().find("frozen-parameter checksum unchanged"), std::string::npos);

    EvalArgs e;
    e.annotations = "natural";
    e.checkpoint = "base/checkpoint";
    e.out = "eval_base";
    ASSERT_EQ(cmd_eval(e, s.ctx()), 0) << s.err.str();
    e.checkpoint = "tuned/checkpoint";
    e.strip_prompts = true;
    e.out = "eval_strip";
    ASSERT_EQ(cmd_eval(e, s.ctx()), 0) << s.err.str();
    EXPECT_EQ(slurp(s.dir / "eval_base" / "metrics.csv"), slurp(s.dir / "eval_strip" / "metrics.csv"));
    EXPECT_EQ(slurp(s.dir / "eval_base" / "results.json"), slurp(s.dir / "eval_strip" / "results.json"));

    // A backbone key that contradicts the base checkpoint is refused.
    tune.sets.push_back("channels=16");
    tune.out = "conflict";
    EXPECT_EQ(cmd_train(tune, s.ctx()), 1);
    EXPECT_NE(s.err.str().find("channels"), std::string::npos);
}

TEST(CliTrain, EchoedConfigReparsesToTheSameRun) {
    Session s("echo");
    cmd_gen({"natural", 4, 1, "data"}, s.ctx());
    TrainArgs a;
    a.sets = kTiny;
    a.sets.push_back("steps=7");
    a.data = "data";
    a.out = "run";
    a.seed = 5;
    ASSERT_EQ(cmd_train(a, s.ctx()), 0) << s.err.str();
    RunConfig back;
    back.load_file(s.dir / "run" / "config.txt");
    EXPECT_EQ(back.train.seed, 5u);
    EXPECT_EQ(back.train.steps, 7u);
    EXPECT_EQ(back.render(), build_config(s.ctx(), "run/config.txt", {}).render());
    const Archive ar = load_archive(s.dir / "run" / "checkpoint");
    EXPECT_EQ(model_config_from_archive(ar).to_map(), back.model.to_map());
}

TEST(CliConfig, OverridesApplyFileThenEnvironmentThenFlags) {
    Session s("precedence");
    write_text_file(s.dir / "c.cfg", "seed = 1\nlr = 0.25\n");
    ::setenv("VLPOSE_SEED", "2", 1);
    EXPECT_EQ(build_config(s.ctx(), "c.cfg", {}).train.seed, 2u);
    EXPECT_EQ(build_config(s.ctx(), "c.cfg", {"seed=3"}).train.seed, 3u);
    ::unsetenv("VLPOSE_SEED");
    EXPECT_EQ(build_config(s.ctx(), "c.cfg", {}).train.seed, 1u);
    EXPECT_DOUBLE_EQ(build_config(s.ctx(), "c.cfg", {}).train.lr, 0.25);
    EXPECT_THROW(build_config(s.ctx(), "c.cfg", {"lr"}), ConfigError);
    EXPECT_THROW(build_config(s.ctx(), "absent.cfg", {}), ConfigError);
}

TEST(CliConfig, ShippedConfigsParse) {
    Session s("shipped");
    for (const char* f : {"desk.cfg", "tune.cfg", "ablate.cfg"}) {
        const RunConfig rc = build_config(s.ctx(), std::string(VLPOSE_SOURCE_DIR) + "/configs/" + f, {});
        EXPECT_NO_THROW(rc.validate()) << f;
    }
}

TEST(CliDump, ZeroModelGivesFlatDegenerateMaps) {
    Session s("dump_zero");
    VLPoseModel<float> model(tiny_model(0, "Baseline", MatcherVariant::none));
    for (const auto& [n, e] : model.params().entries()) Var<float>(e.var).mutable_value().fill(0.0f);
    save_archive(s.dir / "zero", model.to_archive());
    cmd_gen({"natural", 1, 4, "data"}, s.ctx());
    DumpArgs d;
    d.checkpoint = "zero";
    d.image = "data/images/" + load_annotations(s.dir / "data" / "annotations.json").images.at(0).file_name;
    d.out = "maps";
    ASSERT_EQ(cmd_dump_heatmaps(d, s.ctx()), 0) << s.err.str();
    const auto j = nlohmann::json::parse(slurp(s.dir / "maps" / "keypoints.json"));
    ASSERT_EQ(j["keypoints"].size(), 17u);
    for (const auto& k : j["keypoints"]) {
        EXPECT_TRUE(k["degenerate"].get<bool>());
        const Image img = read_pnm(s.dir / "maps" / k["file"].get<std::string>());
        EXPECT_EQ(img.width, 8u);
        EXPECT_EQ(img.height, 8u);
        for (auto p : img.pixels) EXPECT_EQ(p, 0);
    }
    EXPECT_TRUE(fs::exists(s.dir / "maps" / "heatmap_00_nose.pgm"));
}

TEST(CliDump, PlantedPeakIsWrittenAndDecoded) {
    Session s("dump_planted");
    Tensor<float> maps({2, 6, 4});
    maps[(0 * 6 + 3) * 4 + 1] = 2.0f;
    maps[(1 * 6 + 0) * 4 + 2] = 1.0f;
    const auto j = dump_heatmaps(maps, CropTransform{}, s.dir);
    EXPECT_EQ(j["keypoints"][0]["name"], "kp0");
    EXPECT_DOUBLE_EQ(j["keypoints"][0]["x"].get<double>(), heatmap_to_input(1, 4));
    EXPECT_DOUBLE_EQ(j["keypoints"][0]["y"].get<double>(), heatmap_to_input(3, 4));
    const Image img = read_pnm(s.dir / "heatmap_00_kp0.pgm");
    EXPECT_EQ(img.pixels[3 * 4 + 1], 255);
    EXPECT_EQ(img.pixels[0], 0);
}

TEST(CliDump, DeterministicAndValidated) {
    Session s("dump_det");
    VLPoseModel<float> model(tiny_model());
    save_archive(s.dir / "ckpt", model.to_archive());
    cmd_gen({"art", 1, 4, "data"}, s.ctx());
    DumpArgs d;
    d.checkpoint = "ckpt";
    d.image = "data/images/" + load_annotations(s.dir / "data" / "annotations.json").images.at(0).file_name;
    d.bbox = "2,3,40,50";
    d.category = 3;
    d.out = "a";
    ASSERT_EQ(cmd_dump_heatmaps(d, s.ctx()), 0) << s.err.str();
    d.out = "b";
    ASSERT_EQ(cmd_dump_heatmaps(d, s.ctx()), 0);
    EXPECT_EQ(slurp(s.dir / "a" / "keypoints.json"), slurp(s.dir / "b" / "keypoints.json"));
    EXPECT_EQ(slurp(s.dir / "a" / "heatmap_16_right_ankle.pgm"), slurp(s.dir / "b" / "heatmap_16_right_ankle.pgm"));
    d.bbox = "1,2,0,5";
    EXPECT_EQ(cmd_dump_heatmaps(d, s.ctx()), 1);
    d.bbox.clear();
    d.category = 20;
    EXPECT_EQ(cmd_dump_heatmaps(d, s.ctx()), 2);
}

TEST(CliParams, CountsPerFinetuneMode) {
    Session s("params");
    ParamsArgs p;
    p.sets = kTiny;
    p.sets.push_back("prompt_tokens=4");
    ASSERT_EQ(cmd_params(p, s.ctx()), 0) << s.err.str();
    std::istringstream is(s.out.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "mode,trainable,total");
    RunConfig rc = build_config(s.ctx(), "", p.sets);
    VLPoseModel<float> model(rc.model);
    const std::size_t total = count_params(model.params()).total;
    for (FinetuneMode m : {FinetuneMode::full, FinetuneMode::visual_prompt, FinetuneMode::last_layer}) {
        ASSERT_TRUE(std::getline(is, line));
        model.apply_trainable_mask(m);
        EXPECT_EQ(line, to_string(m) + "," + std::to_string(count_params(model.params(), CountFilter::trainable).total) + "," +
                            std::to_string(total));
    }
}

TEST(CliAblate, UnknownSuiteRejected) {
    Session s("ablate_bad");
    AblateArgs a;
    a.suite = "everything";
    a.out = "x";
    EXPECT_EQ(cmd_ablate(a, s.ctx()), 1);
    EXPECT_NE(s.err.str().find("everything"), std::string::npos);
}

}  // namespace
