#include "sadcoeff/expnet.hpp"

#include "sadcoeff/errors.hpp"

#include <cmath>

namespace sadcoeff {

namespace {

constexpr std::uint64_t kStreamInit = 0xE1;
constexpr std::uint64_t kStreamTrain = 0xE2;
constexpr std::uint64_t kStreamEval = 0xE3;

nn::Tensor stage_forward(const EncoderStage& s, const nn::Tensor& x) {
    const nn::Tensor h = nn::relu(s.down(x));
    const nn::Tensor r = s.res2(nn::relu(s.res1(h)));
    return nn::relu(nn::add(h, r));
}

std::vector<int> non_eye_columns() {
    std::vector<int> cols;
    for (int i : non_eye_landmarks()) {
        cols.push_back(2 * i);
        cols.push_back(2 * i + 1);
    }
    return cols;
}

std::vector<int> mouth_columns() {
    std::vector<int> cols;
    for (int i = kMouthLandmarkBegin; i < kNumLandmarks; ++i) {
        cols.push_back(2 * i);
        cols.push_back(2 * i + 1);
    }
    return cols;
}

std::vector<double> to_vec(const Eigen::MatrixXd& m) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return v;
}

}  // namespace

nn::Tensor AudioEncoder::operator()(const nn::Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != kWindowFrames || x.dim(3) != kMelBands) {
        throw InvalidArgument("AudioEncoder: input must be [N, 1, 16, 80], got " + nn::shape_string(x.shape()));
    }
    nn::Tensor h = x;
    for (const auto& s : stages) h = stage_forward(s, h);
    return nn::global_avg_pool(h);
}

AudioEncoder make_audio_encoder(nn::ParamSet& params, const std::string& prefix, const std::array<int, 4>& widths,
                                Rng& rng) {
    static constexpr nn::Conv2dSpec kDown[4] = {
        {2, 2, 1, 1},  // 16x80 -> 8x40
        {2, 2, 1, 1},  // -> 4x20
        {2, 4, 1, 0},  // -> 2x5 with a 3x4 kernel
        {2, 5, 1, 0},  // -> 1x1 with a 3x5 kernel
    };
    static constexpr int kKernelW[4] = {3, 3, 4, 5};
    const nn::Conv2dSpec same{1, 1, 1, 1};
    AudioEncoder enc;
    int in = 1;
    for (int i = 0; i < 4; ++i) {
        const std::string p = prefix + ".stage" + std::to_string(i + 1);
        const int w = widths[static_cast<std::size_t>(i)];
        enc.stages[static_cast<std::size_t>(i)] = EncoderStage{
            nn::make_conv2d(params, p + ".down", in, w, 3, kKernelW[i], kDown[i], rng),
            nn::make_conv2d(params, p + ".res1", w, w, 3, 3, same, rng),
            nn::make_conv2d(params, p + ".res2", w, w, 3, 3, same, rng),
        };
        in = w;
    }
    return enc;
}

nn::Tensor stack_windows(std::span<const MelWindow* const> windows) {
    constexpr std::size_t kCells = kWindowFrames * kMelBands;
    std::vector<double> data(windows.size() * kCells);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const MelWindowData x = normalize_window(*windows[i]);
        std::copy(x.data(), x.data() + kCells, data.begin() + static_cast<std::ptrdiff_t>(i * kCells));
    }
    return nn::Tensor::constant({static_cast<int>(windows.size()), 1, kWindowFrames, kMelBands}, std::move(data));
}

nn::Tensor stack_windows(std::span<const MelWindow> windows) {
    std::vector<const MelWindow*> ptrs;
    ptrs.reserve(windows.size());
    for (const auto& w : windows) ptrs.push_back(&w);
    return stack_windows(std::span<const MelWindow* const>(ptrs));
}

// ---- model ----------------------------------------------------------------------------------

ExpNet::ExpNet(const ExpNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    for (int w : cfg.widths) {
        if (w <= 0) throw InvalidArgument("ExpNet: encoder widths must be positive");
    }
    Rng rng(seed);
    encoder_ = make_audio_encoder(params_, "expnet.encoder", cfg.widths, rng);
    const int emb = encoder_.out_dim();
    const int in = emb + kExpressionDim + 1;
    // Embedding block: uniform fan-in init. beta0 block: identity, so the
    // untrained head passes the reference expression through. Blink column
    // and bias start at zero.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(static_cast<std::size_t>(kExpressionDim) * in, 0.0);
    for (int r = 0; r < kExpressionDim; ++r) {
        for (int c = 0; c < emb; ++c) w[static_cast<std::size_t>(r * in + c)] = rng.uniform(-bound, bound);
        w[static_cast<std::size_t>(r * in + emb + r)] = 1.0;
    }
    head_.w = params_.add("expnet.head.weight", {kExpressionDim, in}, std::move(w));
    head_.b = params_.add_zeros("expnet.head.bias", {kExpressionDim});
}

nn::Tensor ExpNet::forward(const nn::Tensor& windows, const nn::Tensor& beta0, const nn::Tensor& z) const {
    const int n = windows.dim(0);
    if (beta0.rank() != 2 || beta0.dim(0) != n || beta0.dim(1) != kExpressionDim) {
        throw InvalidArgument("ExpNet: beta0 must be [N, 64]");
    }
    if (z.rank() != 2 || z.dim(0) != n || z.dim(1) != 1) throw InvalidArgument("ExpNet: blink must be [N, 1]");
    const nn::Tensor emb = encoder_(windows);
    return head_(nn::concat_cols({emb, beta0, z}));
}

std::vector<ExpressionVector> ExpNet::generate(std::span<const MelWindow> windows, const ExpressionVector& beta0,
                                               std::span<const double> blink) const {
    if (windows.empty()) throw InvalidArgument("ExpNet::generate: no frames");
    if (blink.size() != windows.size()) throw InvalidArgument("ExpNet::generate: blink length must equal frame count");
    nn::NoGradGuard guard;
    const int n = static_cast<int>(windows.size());
    std::vector<double> b0(static_cast<std::size_t>(n) * kExpressionDim);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < kExpressionDim; ++k) b0[static_cast<std::size_t>(i * kExpressionDim + k)] = beta0[k];
    const nn::Tensor out = forward(stack_windows(windows), nn::Tensor::constant({n, kExpressionDim}, std::move(b0)),
                                   nn::Tensor::constant({n, 1}, std::vector<double>(blink.begin(), blink.end())));
    std::vector<ExpressionVector> res(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < kExpressionDim; ++k) res[static_cast<std::size_t>(i)][k] = out.at(static_cast<std::size_t>(i * kExpressionDim + k));
    return res;
}

void ExpNet::zero_head() {
    auto w = head_.w.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    auto b = head_.b.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
}

void ExpNet::set_head_bias(const ExpressionVector& bias) {
    auto b = head_.b.mutable_data();
    for (int k = 0; k < kExpressionDim; ++k) b[static_cast<std::size_t>(k)] = nn::to_f32(bias[k]);
}

// ---- losses -----------------------------------------------------------------------------------

nn::Tensor loss_distill(const nn::Tensor& pred, const nn::Tensor& teacher) {
    if (pred.shape() != teacher.shape()) throw InvalidArgument("loss_distill: shape mismatch");
    return nn::mean(nn::square(nn::sub(pred, teacher)));
}

nn::Tensor landmarks_from_beta(const nn::Tensor& beta, const BlendshapeLandmarkModel& lmodel) {
    const Eigen::MatrixXd& basis = lmodel.basis_2d();  // 136 x 64
    const nn::Tensor b = nn::Tensor::constant({2 * kNumLandmarks, kExpressionDim}, to_vec(basis));
    const Eigen::VectorXd& mean = lmodel.mean_2d();
    const nn::Tensor m = nn::Tensor::constant({2 * kNumLandmarks}, std::vector<double>(mean.data(), mean.data() + mean.size()));
    return nn::add_rowvec(nn::matmul_nt(beta, b), m);
}

nn::Tensor eye_ratio_rows(const nn::Tensor& lms) {
    if (lms.rank() != 2 || lms.dim(1) != 2 * kNumLandmarks) throw InvalidArgument("eye_ratio_rows: expected [N, 136]");
    const int n = lms.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] =
            eye_ratio(Landmarks2D::from_flat(lms.data().subspan(static_cast<std::size_t>(i) * 2 * kNumLandmarks, 2 * kNumLandmarks)));
    }
    nn::Node* pl = lms.node_ptr().get();
    return nn::make_op({n, 1}, std::move(out), {lms}, [pl, n](nn::Node& self) {
        auto& g = pl->grad_buffer();
        for (int i = 0; i < n; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * 2 * kNumLandmarks;
            const Landmarks2D l = Landmarks2D::from_flat(std::span<const double>(pl->value).subspan(off, 2 * kNumLandmarks));
            const auto d = eye_ratio_gradient(l);
            for (int p = 0; p < kNumLandmarks; ++p)
                for (int a = 0; a < 2; ++a) g[off + 2 * p + a] += self.grad[static_cast<std::size_t>(i)] * d(p, a);
        }
    });
}

LksParts loss_lks(const nn::Tensor& pred_lms, const nn::Tensor& teacher_lms, const nn::Tensor& blink, int sequences,
                  const ExpLossWeights& weights) {
    if (pred_lms.shape() != teacher_lms.shape()) throw InvalidArgument("loss_lks: landmark shape mismatch");
    const int n = pred_lms.dim(0);
    if (blink.rank() != 2 || blink.dim(0) != n || blink.dim(1) != 1) throw InvalidArgument("loss_lks: blink must be [N, 1]");
    if (sequences <= 0 || n % sequences != 0) throw InvalidArgument("loss_lks: rows must split into equal sequences");
    static const std::vector<int> kCols = non_eye_columns();
    const double points = static_cast<double>(kCols.size() / 2);
    LksParts p;
    p.eye = nn::scale(nn::sum(nn::abs(nn::sub(eye_ratio_rows(pred_lms), blink))), 1.0 / sequences);
    const nn::Tensor diff = nn::sub(nn::select_cols(pred_lms, kCols), nn::select_cols(teacher_lms, kCols));
    p.non_eye = nn::scale(nn::sum(nn::square(diff)), 1.0 / (static_cast<double>(n) * points));
    p.total = nn::weighted_sum({{weights.eye, p.eye}, {1.0, p.non_eye}});
    return p;
}

nn::Tensor reading_logits(const nn::Tensor& lms, const ReadingOracle& reader) {
    static const std::vector<int> kCols = mouth_columns();
    const int in = static_cast<int>(kCols.size());
    const nn::Tensor center =
        nn::Tensor::constant({in}, std::vector<double>(reader.center.data(), reader.center.data() + reader.center.size()));
    const nn::Tensor feats = nn::scale(nn::add_rowvec(nn::select_cols(lms, kCols), nn::scale(center, -1.0)), 1.0 / reader.scale);
    const nn::Tensor w = nn::Tensor::constant({kNumChars, in}, to_vec(reader.weight));
    const nn::Tensor b =
        nn::Tensor::constant({kNumChars}, std::vector<double>(reader.bias.data(), reader.bias.data() + reader.bias.size()));
    return nn::linear(feats, w, b);
}

nn::Tensor loss_read(const nn::Tensor& pred_logits, const nn::Tensor& target_logits) {
    return nn::soft_cross_entropy(pred_logits, target_logits);
}

double combine_exp_loss(const ExpLossWeights& w, double distill, double read, double lks) {
    return w.distill * distill + w.read * read + w.lks * lks;
}

nn::Tensor combine_exp_loss(const ExpLossWeights& w, const nn::Tensor& distill, const nn::Tensor& read,
                            const nn::Tensor& lks) {
    return nn::weighted_sum({{w.distill, distill}, {w.read, read}, {w.lks, lks}});
}

double loss_distill(std::span<const ExpressionVector> pred, std::span<const ExpressionVector> teacher) {
    if (pred.size() != teacher.size() || pred.empty()) throw InvalidArgument("loss_distill: length mismatch");
    const int n = static_cast<int>(pred.size());
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
        a.insert(a.end(), pred[static_cast<std::size_t>(i)].data(), pred[static_cast<std::size_t>(i)].data() + kExpressionDim);
        b.insert(b.end(), teacher[static_cast<std::size_t>(i)].data(), teacher[static_cast<std::size_t>(i)].data() + kExpressionDim);
    }
    return loss_distill(nn::Tensor::constant({n, kExpressionDim}, a), nn::Tensor::constant({n, kExpressionDim}, b)).item();
}

double loss_lks(std::span<const Landmarks2D> pred, std::span<const Landmarks2D> teacher, std::span<const double> blink,
                const ExpLossWeights& weights) {
    if (pred.size() != teacher.size() || pred.size() != blink.size() || pred.empty()) {
        throw InvalidArgument("loss_lks: sequence lengths differ");
    }
    const int n = static_cast<int>(pred.size());
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
        const auto fa = pred[static_cast<std::size_t>(i)].flat();
        const auto fb = teacher[static_cast<std::size_t>(i)].flat();
        a.insert(a.end(), fa.data(), fa.data() + fa.size());
        b.insert(b.end(), fb.data(), fb.data() + fb.size());
    }
    return loss_lks(nn::Tensor::constant({n, 2 * kNumLandmarks}, a), nn::Tensor::constant({n, 2 * kNumLandmarks}, b),
                    nn::Tensor::constant({n, 1}, std::vector<double>(blink.begin(), blink.end())), 1, weights)
        .total.item();
}

double loss_read(const Eigen::MatrixXd& pred_logits, const Eigen::MatrixXd& target_logits) {
    if (pred_logits.rows() != target_logits.rows() || pred_logits.cols() != target_logits.cols()) {
        throw InvalidArgument("loss_read: shape mismatch");
    }
    const int r = static_cast<int>(pred_logits.rows()), c = static_cast<int>(pred_logits.cols());
    return loss_read(nn::Tensor::constant({r, c}, to_vec(pred_logits)), nn::Tensor::constant({r, c}, to_vec(target_logits)))
        .item();
}

// ---- batches and training ------------------------------------------------------------------

ExpBatch sample_exp_batch(const Corpus& corpus, int sequences, int frames, Rng& rng) {
    if (corpus.clips.empty()) throw EmptyInput("sample_exp_batch: empty corpus");
    if (sequences <= 0 || frames <= 0) throw InvalidArgument("sample_exp_batch: bad batch shape");
    const int n = sequences * frames;
    std::vector<const MelWindow*> wins;
    std::vector<double> beta0, blink, target;
    wins.reserve(static_cast<std::size_t>(n));
    for (int s = 0; s < sequences; ++s) {
        const SynthClip& c = corpus.clips[rng.index(corpus.clips.size())];
        if (c.frames() < frames) throw InvalidArgument("sample_exp_batch: clip shorter than the training window");
        const int start = static_cast<int>(rng.index(static_cast<std::size_t>(c.frames() - frames + 1)));
        for (int t = start; t < start + frames; ++t) {
            wins.push_back(&c.windows[static_cast<std::size_t>(t)]);
            beta0.insert(beta0.end(), c.beta0.data(), c.beta0.data() + kExpressionDim);
            const ExpressionVector tg = c.target(t);
            target.insert(target.end(), tg.data(), tg.data() + kExpressionDim);
            blink.push_back(rng.uniform());
        }
    }
    ExpBatch b;
    b.sequences = sequences;
    b.frames = frames;
    b.windows = stack_windows(std::span<const MelWindow* const>(wins));
    b.beta0 = nn::Tensor::constant({n, kExpressionDim}, std::move(beta0));
    b.blink = nn::Tensor::constant({n, 1}, std::move(blink));
    b.target = nn::Tensor::constant({n, kExpressionDim}, std::move(target));
    return b;
}

ExpLoss expnet_loss(const ExpNet& net, const ExpBatch& batch, const CorpusAssets& assets, const ExpLossWeights& w) {
    const nn::Tensor pred = net.forward(batch.windows, batch.beta0, batch.blink);
    ExpLoss l;
    l.distill = loss_distill(pred, batch.target);
    const nn::Tensor pred_lms = landmarks_from_beta(pred, assets.landmarks);
    nn::Tensor teacher_lms, target_logits;
    {
        nn::NoGradGuard guard;
        teacher_lms = landmarks_from_beta(batch.target, assets.landmarks);
        target_logits = reading_logits(teacher_lms, assets.reader);
    }
    l.lks = loss_lks(pred_lms, teacher_lms, batch.blink, batch.sequences, w).total;
    l.read = loss_read(reading_logits(pred_lms, assets.reader), target_logits);
    l.total = combine_exp_loss(w, l.distill, l.read, l.lks);
    return l;
}

ExpNetConfig expnet_config(const RunConfig& cfg) { return ExpNetConfig{cfg.expnet_widths}; }

ExpLossWeights exp_loss_weights(const RunConfig& cfg) {
    return ExpLossWeights{cfg.lambda_distill, cfg.lambda_read, cfg.lambda_lks, cfg.lambda_eye};
}

ExpBatch expnet_eval_batch(const Corpus& corpus, const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kStreamEval));
    return sample_exp_batch(corpus, cfg.expnet_batch, kExpFrames, rng);
}

ExpTrainResult train_expnet(const Corpus& corpus, const RunConfig& cfg, const std::filesystem::path& out_dir, bool resume,
                            const ProgressFn& progress) {
    validate_config(cfg);
    ExpTrainResult res;
    res.net = std::make_unique<ExpNet>(expnet_config(cfg), derive_seed(cfg.seed, kStreamInit));
    ExpNet& net = *res.net;
    nn::Adam opt(net.params(), nn::AdamConfig{cfg.expnet_lr});
    res.history.columns = {"loss", "loss_distill", "loss_read", "loss_lks"};
    long start = 0;
    if (resume) {
        load_param_set(out_dir, "expnet", net.params(), &opt);
        start = load_train_step(out_dir);
        if (std::filesystem::exists(out_dir / "history.csv")) {
            res.history = TrainHistory::from_csv(read_text_file(out_dir / "history.csv"));
        }
    }
    const ExpLossWeights w = exp_loss_weights(cfg);
    const ExpBatch eval = expnet_eval_batch(corpus, cfg);
    auto eval_distill = [&] {
        nn::NoGradGuard guard;
        return loss_distill(net.forward(eval.windows, eval.beta0, eval.blink), eval.target).item();
    };
    res.eval_distill_initial = eval_distill();

    auto checkpoint = [&](long step) {
        if (out_dir.empty()) return;
        save_param_set(out_dir, "expnet", net.params(), opt);
        save_train_state(out_dir, step, cfg);
        write_text_file(out_dir / "history.csv", res.history.to_csv());
    };

    for (long step = start; step < cfg.expnet_steps; ++step) {
        Rng rng(derive_seed(derive_seed(cfg.seed, kStreamTrain), static_cast<std::uint64_t>(step)));
        const ExpBatch batch = sample_exp_batch(corpus, cfg.expnet_batch, kExpFrames, rng);
        const ExpLoss l = expnet_loss(net, batch, corpus.assets, w);
        require_finite(l.total.item(), "train-expnet", step, "loss");
        net.params().zero_grad();
        nn::backward(l.total);
        opt.step(net.params());
        std::vector<double> row{l.total.item(), l.distill.item(), l.read.item(), l.lks.item()};
        if (progress) progress(step, row);
        res.history.add(step, std::move(row));
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step + 1);
    }
    res.eval_distill_final = eval_distill();
    checkpoint(std::max<long>(start, cfg.expnet_steps));
    return res;
}

std::unique_ptr<ExpNet> load_expnet(const std::filesystem::path& dir) {
    const RunConfig cfg = load_train_config(dir);
    auto net = std::make_unique<ExpNet>(expnet_config(cfg), derive_seed(cfg.seed, kStreamInit));
    load_param_set(dir, "expnet", net->params(), nullptr);
    return net;
}

}  // namespace sadcoeff
