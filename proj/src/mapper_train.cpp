#include "sadcoeff/mapper_train.hpp"

#include "sadcoeff/errors.hpp"

namespace sadcoeff {

namespace {

constexpr std::uint64_t kStreamInit = 0xC1;
constexpr std::uint64_t kStreamTrain = 0xC2;
constexpr std::uint64_t kStreamEval = 0xC3;

}  // namespace

MapperBatch sample_mapper_batch(const Corpus& corpus, int size, Rng& rng) {
    if (corpus.clips.empty()) throw EmptyInput("sample_mapper_batch: empty corpus");
    if (size <= 0) throw InvalidArgument("sample_mapper_batch: batch size must be positive");
    const KeypointOracle& oracle = corpus.assets.keypoints;
    const int k = oracle.num_keypoints();
    std::vector<CoeffWindow> wins;
    std::vector<double> target;
    wins.reserve(static_cast<std::size_t>(size));
    for (int b = 0; b < size; ++b) {
        const SynthClip& c = corpus.clips[rng.index(corpus.clips.size())];
        const int t = static_cast<int>(rng.index(static_cast<std::size_t>(c.frames())));
        wins.push_back(coeff_window(c.motion(), t));
        const Eigen::MatrixXd kp = oracle.keypoints(wins.back());
        for (int i = 0; i < k; ++i)
            for (int a = 0; a < 3; ++a) target.push_back(kp(i, a));
    }
    return MapperBatch{stack_mapper_inputs(wins), nn::Tensor::constant({size, 3 * k}, std::move(target))};
}

nn::Tensor mapper_l1(const MappingNet& net, const MapperBatch& batch, const Eigen::MatrixXd& canonical) {
    const int k = static_cast<int>(canonical.rows());
    if (net.config().num_keypoints != k) throw InvalidArgument("mapper_l1: keypoint count differs from the canonical set");
    const MappingNet::Output out = net.forward(batch.input);
    return nn::keypoint_l1(nn::transform_keypoints(out.rot, out.tr, out.delta, canonical), batch.target, k);
}

nn::Tensor mapper_loss(const MappingNet& net, const MapperBatch& batch, const Eigen::MatrixXd& canonical,
                       double lambda_l1) {
    return nn::scale(mapper_l1(net, batch, canonical), lambda_l1);
}

MapperConfig mapper_config(const RunConfig& cfg) { return MapperConfig{cfg.mapper_channels, cfg.num_keypoints}; }

MapperBatch mapper_eval_batch(const Corpus& corpus, const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kStreamEval));
    return sample_mapper_batch(corpus, cfg.mapper_batch, rng);
}

MapperTrainResult train_mapper(const Corpus& corpus, const RunConfig& cfg, const std::filesystem::path& out_dir,
                               bool resume, const ProgressFn& progress) {
    validate_config(cfg);
    const Eigen::MatrixXd& canonical = corpus.assets.keypoints.canonical;
    if (canonical.rows() != cfg.num_keypoints) {
        throw InvalidArgument("train_mapper: config asks for " + std::to_string(cfg.num_keypoints) +
                              " keypoints but the corpus oracle has " + std::to_string(canonical.rows()));
    }
    MapperTrainResult res;
    res.net = std::make_unique<MappingNet>(mapper_config(cfg), derive_seed(cfg.seed, kStreamInit));
    MappingNet& net = *res.net;
    nn::Adam opt(net.params(), nn::AdamConfig{cfg.mapper_lr});
    res.history.columns = {"loss", "loss_l1"};
    long start = 0;
    if (resume) {
        load_param_set(out_dir, "mapper", net.params(), &opt);
        start = load_train_step(out_dir);
        if (std::filesystem::exists(out_dir / "history.csv")) {
            res.history = TrainHistory::from_csv(read_text_file(out_dir / "history.csv"));
        }
    }
    const MapperBatch eval = mapper_eval_batch(corpus, cfg);
    auto eval_l1 = [&] {
        nn::NoGradGuard guard;
        return mapper_l1(net, eval, canonical).item();
    };
    res.eval_l1_initial = eval_l1();

    auto checkpoint = [&](long step) {
        if (out_dir.empty()) return;
        save_param_set(out_dir, "mapper", net.params(), opt);
        save_train_state(out_dir, step, cfg);
        write_text_file(out_dir / "history.csv", res.history.to_csv());
    };

    for (long step = start; step < cfg.mapper_steps; ++step) {
        Rng rng(derive_seed(derive_seed(cfg.seed, kStreamTrain), static_cast<std::uint64_t>(step)));
        const MapperBatch batch = sample_mapper_batch(corpus, cfg.mapper_batch, rng);
        const nn::Tensor l1 = mapper_l1(net, batch, canonical);
        const nn::Tensor loss = nn::scale(l1, cfg.lambda_l1);
        require_finite(loss.item(), "train-mapper", step, "loss");
        net.params().zero_grad();
        nn::backward(loss);
        opt.step(net.params());
        std::vector<double> row{loss.item(), l1.item()};
        if (progress) progress(step, row);
        res.history.add(step, std::move(row));
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step + 1);
    }
    res.eval_l1_final = eval_l1();
    checkpoint(std::max<long>(start, cfg.mapper_steps));
    return res;
}

std::unique_ptr<MappingNet> load_mapper(const std::filesystem::path& dir) {
    const RunConfig cfg = load_train_config(dir);
    auto net = std::make_unique<MappingNet>(mapper_config(cfg), derive_seed(cfg.seed, kStreamInit));
    load_param_set(dir, "mapper", net->params(), nullptr);
    return net;
}

}  // namespace sadcoeff
