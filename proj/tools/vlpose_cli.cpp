#include <CLI11.hpp>

#include "vlpose/cli.hpp"

int main(int argc, char** argv) {
    using namespace vlpose::cli;
    CLI::App app{"Vision-language pose estimation: data generation, training, evaluation and ablations"};
    app.require_subcommand(1);
    std::string workdir = ".";
    app.add_option("--workdir", workdir, "Base directory for relative paths");

    GenArgs gen;
    std::uint64_t gen_seed = 0;
    auto* g = app.add_subcommand("gen", "Generate a synthetic keypoint dataset");
    g->add_option("--domain", gen.domain, "natural, art, art:<1..14> or all")->capture_default_str();
    g->add_option("--n", gen.n, "Number of images")->capture_default_str();
    auto* gs = g->add_option("--seed", gen_seed, "Random seed (default: VLPOSE_SEED or 0)");
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs train;
    std::uint64_t train_seed = 0;
    auto* t = app.add_subcommand("train", "Train from scratch or prompt-tune a checkpoint");
    t->add_option("--config", train.config, "key = value configuration file");
    t->add_option("--set", train.sets, "Override a configuration key (key=value)");
    t->add_option("--mode", train.mode, "scratch or prompt_tune")->capture_default_str();
    t->add_option("--decoder", train.decoder, "Decoder wiring name");
    t->add_option("--matcher", train.matcher, "Relation matcher variant");
    t->add_option("--base", train.base, "Base checkpoint for prompt_tune");
    t->add_option("--data", train.data, "Training dataset directory or annotations file");
    auto* ts = t->add_option("--seed", train_seed, "Seed (overrides config and VLPOSE_SEED)");
    t->add_option("--out", train.out, "Output directory")->required();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a results file");
    e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory");
    e->add_option("--annotations", eval.annotations, "Dataset directory or annotations file")->required();
    e->add_option("--results", eval.results, "Predictions JSON to score instead of a checkpoint");
    e->add_option("--text-table", eval.text_table, "Embedding table used at training time");
    e->add_flag("--strip-prompts", eval.strip_prompts, "Evaluate without prompts, matcher and auxiliary branch");
    e->add_option("--batch", eval.batch, "Inference batch size")->capture_default_str();
    e->add_option("--out", eval.out, "Output directory")->required();

    AblateArgs ablate;
    std::uint64_t ablate_seed = 0;
    auto* a = app.add_subcommand("ablate", "Run an ablation suite and write its tables");
    a->add_option("--suite", ablate.suite, "matcher, prompt, decoder, tokens or all")->capture_default_str();
    a->add_option("--config", ablate.config, "key = value configuration file");
    a->add_option("--set", ablate.sets, "Override a configuration key (key=value)");
    a->add_option("--base", ablate.base, "Pretrained baseline checkpoint for the Small size");
    a->add_option("--pretrain-data", ablate.pretrain_data, "Natural-domain training set (generated when omitted)");
    a->add_option("--tune-data", ablate.tune_data, "Art-domain tuning set (generated when omitted)");
    a->add_option("--eval-data", ablate.eval_data, "Art-domain evaluation set (generated when omitted)");
    a->add_option("--n-pretrain", ablate.n_pretrain, "Generated pretraining images")->capture_default_str();
    a->add_option("--n-tune", ablate.n_tune, "Generated tuning images")->capture_default_str();
    a->add_option("--n-eval", ablate.n_eval, "Generated evaluation images")->capture_default_str();
    auto* as = a->add_option("--seed", ablate_seed, "Seed (overrides config and VLPOSE_SEED)");
    a->add_option("--out", ablate.out, "Output directory")->required();

    DumpArgs dump;
    auto* d = app.add_subcommand("dump-heatmaps", "Write per-keypoint heatmaps for one image");
    d->add_option("--checkpoint", dump.checkpoint, "Checkpoint directory")->required();
    d->add_option("--image", dump.image, "PPM or PGM image")->required();
    d->add_option("--bbox", dump.bbox, "Person box x,y,w,h (default: whole image)");
    d->add_option("--category", dump.category, "Category id 1..19")->capture_default_str();
    d->add_option("--text-table", dump.text_table, "Embedding table used at training time");
    d->add_flag("--strip-prompts", dump.strip_prompts, "Use the stripped baseline model");
    d->add_option("--out", dump.out, "Output directory")->required();

    ParamsArgs params;
    auto* p = app.add_subcommand("params", "Count trainable parameters per finetuning mode");
    p->add_option("--config", params.config, "key = value configuration file");
    p->add_option("--set", params.sets, "Override a configuration key (key=value)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kOk : kUsage;
    }

    Context ctx;
    ctx.workdir = workdir;
    if (*g) {
        if (*gs) gen.seed = gen_seed;
        return cmd_gen(gen, ctx);
    }
    if (*t) {
        if (*ts) train.seed = train_seed;
        return cmd_train(train, ctx);
    }
    if (*e) return cmd_eval(eval, ctx);
    if (*a) {
        if (*as) ablate.seed = ablate_seed;
        return cmd_ablate(ablate, ctx);
    }
    if (*d) return cmd_dump_heatmaps(dump, ctx);
    if (*p) return cmd_params(params, ctx);
    return kUsage;
}
