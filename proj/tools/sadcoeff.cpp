// sadcoeff: synthetic corpus generation, training, generation, evaluation
// and gradient checks from the command line.

#include "sadcoeff/cli.hpp"
#include "sadcoeff/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace sadcoeff;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* app, Common& c, bool needs_out) {
    app->add_option("--config", c.config, "run config (key = value lines)")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "seed override");
    auto* out = app->add_option("--out", c.out, "output directory");
    if (needs_out) out->required();
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    validate_config(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-driven 3DMM motion coefficients: datagen, training, generation, evaluation"};
    app.require_subcommand(1);

    Common datagen_c;
    auto* datagen = app.add_subcommand("datagen", "write the synthetic corpus");
    add_common(datagen, datagen_c, true);

    Common train_c;
    std::string stage;
    std::string corpus;
    bool resume = false;
    auto* train = app.add_subcommand("train", "train one stage: expnet, posevae or mapper");
    train->add_option("stage", stage, "training stage")->required();
    std::vector<CLI::App*> trainers{train};
    for (const char* s : {"expnet", "posevae", "mapper"}) {
        trainers.push_back(app.add_subcommand(std::string("train-") + s, std::string("train the ") + s + " stage"));
    }
    for (auto* t : trainers) {
        add_common(t, train_c, true);
        t->add_option("--corpus", corpus, "corpus directory (default: corpus_dir from the config)");
        t->add_flag("--resume", resume, "continue from the checkpoint in --out");
    }

    Common gen_c;
    GenerateArgs gen;
    std::string ckpt;
    auto* generate = app.add_subcommand("generate", "audio + reference coefficients -> coefficients and keypoints");
    add_common(generate, gen_c, true);
    generate->add_option("--wav", gen.wav, "input audio")->required()->check(CLI::ExistingFile);
    generate->add_option("--ref", gen.ref, "reference coefficients (1 x 70 COEF)")->required()->check(CLI::ExistingFile);
    generate->add_option("--style", gen.style, "pose style index")->check(CLI::Range(0, 45));
    generate->add_option("--blink", gen.blink, "'auto' or a constant in [0, 1]");
    generate->add_option("--checkpoints", ckpt, "directory holding expnet/, posevae/ and mapper/");
    generate->add_option("--expnet", gen.expnet_dir, "ExpNet checkpoint directory");
    generate->add_option("--posevae", gen.posevae_dir, "PoseVAE checkpoint directory");
    generate->add_option("--mapper", gen.mapper_dir, "MappingNet checkpoint directory");

    Common eval_c;
    std::string generated;
    std::string eval_corpus;
    auto* eval = app.add_subcommand("eval", "pose diversity, beat align and blink recovery");
    add_common(eval, eval_c, true);
    eval->add_option("--generated", generated, "generate output(s) or a corpus directory")->required();
    eval->add_option("--corpus", eval_corpus, "corpus directory (for the landmark model)");

    Common grad_c;
    std::string module = "all";
    std::string corrupt;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks on tiny models");
    add_common(gradcheck, grad_c, false);
    gradcheck->add_option("--module", module, "expnet, posevae, kpmapper or all");
    gradcheck->add_option("--corrupt", corrupt, "scale this group's analytic gradient (negative control)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (datagen->parsed()) {
            cmd_datagen(resolve(datagen_c), datagen_c.out, std::cout);
        } else if (generate->parsed()) {
            const RunConfig cfg = resolve(gen_c);
            if (!ckpt.empty()) {
                if (gen.expnet_dir.empty()) gen.expnet_dir = std::filesystem::path(ckpt) / "expnet";
                if (gen.posevae_dir.empty()) gen.posevae_dir = std::filesystem::path(ckpt) / "posevae";
                if (gen.mapper_dir.empty()) gen.mapper_dir = std::filesystem::path(ckpt) / "mapper";
            }
            if (gen.expnet_dir.empty() || gen.posevae_dir.empty() || gen.mapper_dir.empty()) {
                throw UsageError("generate: give --checkpoints or all of --expnet, --posevae, --mapper");
            }
            gen.out = gen_c.out;
            gen.seed = cfg.seed;
            gen.fps = cfg.fps;
            cmd_generate(gen, std::cout);
        } else if (eval->parsed()) {
            const RunConfig cfg = resolve(eval_c);
            const std::filesystem::path corpus_dir = eval_corpus.empty() ? cfg.corpus_dir : eval_corpus;
            cmd_eval(generated, corpus_dir, cfg, std::filesystem::path(eval_c.out) / "metrics.csv", std::cout);
        } else if (gradcheck->parsed()) {
            const RunConfig cfg = resolve(grad_c);
            return cmd_gradcheck(module, cfg.seed, corrupt, std::cout);
        } else {
            for (auto* t : trainers) {
                if (!t->parsed()) continue;
                const std::string name = t == train ? stage : t->get_name().substr(6);
                const TrainStage st = parse_stage(name);
                const RunConfig cfg = resolve(train_c);
                cmd_train(st, cfg, corpus.empty() ? cfg.corpus_dir : corpus, train_c.out, resume, std::cout);
            }
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
