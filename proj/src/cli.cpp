#include "sadcoeff/cli.hpp"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/expnet.hpp"
#include "sadcoeff/gradcheck.hpp"
#include "sadcoeff/mapper_train.hpp"
#include "sadcoeff/posevae.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace sadcoeff {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kStreamBlink = 0xD1;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

ProgressFn progress_printer(const RunConfig& cfg, const std::vector<std::string>& columns, std::ostream& log) {
    return [&cfg, columns, &log](long step, const std::vector<double>& row) {
        if (cfg.log_every <= 0 || step % cfg.log_every != 0) return;
        log << "step " << step;
        for (std::size_t i = 0; i < row.size() && i < columns.size(); ++i) log << ' ' << columns[i] << '=' << fmt("%.6g", row[i]);
        log << '\n';
    };
}

Landmarks2D landmarks_for(const BlendshapeLandmarkModel& lm, const ExpressionVector& beta) {
    const Eigen::VectorXd flat = lm.mean_2d() + lm.basis_2d() * beta;
    return Landmarks2D::from_flat(std::span<const double>(flat.data(), static_cast<std::size_t>(flat.size())));
}

Eigen::MatrixXd column(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

// ---- datagen ------------------------------------------------------------------------------

int cmd_datagen(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    validate_config(cfg);
    const int clips = write_corpus(cfg, out);
    log << "wrote " << clips << " clips (" << cfg.num_styles << " styles x " << cfg.clips_per_style << ", "
        << cfg.frames_per_clip << " frames at " << cfg.fps << " fps) to " << out.string() << '\n';
    return clips;
}

// ---- training -----------------------------------------------------------------------------

TrainStage parse_stage(const std::string& name) {
    if (name == "expnet") return TrainStage::ExpNet;
    if (name == "posevae") return TrainStage::PoseVAE;
    if (name == "mapper") return TrainStage::Mapper;
    throw UsageError("unknown training stage '" + name + "' (expected expnet, posevae or mapper)");
}

const char* stage_name(TrainStage stage) {
    switch (stage) {
        case TrainStage::ExpNet: return "expnet";
        case TrainStage::PoseVAE: return "posevae";
        case TrainStage::Mapper: return "mapper";
    }
    return "?";
}

TrainSummary cmd_train(TrainStage stage, const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out, bool resume,
               std::ostream& log) {
    validate_config(cfg);
    if (!fs::exists(corpus_dir / "manifest.csv")) throw std::runtime_error("no corpus at " + corpus_dir.string());
    const Corpus corpus = load_corpus(corpus_dir);
    log << "training " << stage_name(stage) << " on " << corpus.clips.size() << " clips\n";
    fs::create_directories(out);
    TrainSummary summary;
    switch (stage) {
        case TrainStage::ExpNet: {
            const auto r = train_expnet(corpus, cfg, out, resume,
                                        progress_printer(cfg, {"loss", "distill", "read", "lks"}, log));
            write_coef(out / "landmark_model.coef", CoefMatrix::from_values(1, static_cast<std::uint32_t>(BlendshapeLandmarkModel::kFlatSize),
                                                                            corpus.assets.landmarks.to_flat()));
            summary = {r.eval_distill_initial, r.eval_distill_final};
            log << "eval L_distill " << fmt("%.6g", r.eval_distill_initial) << " -> " << fmt("%.6g", r.eval_distill_final) << '\n';
            break;
        }
        case TrainStage::PoseVAE: {
            const auto r = train_posevae(corpus, cfg, out, resume,
                                         progress_printer(cfg, {"loss", "mse", "kl", "gan", "disc"}, log));
            summary = {r.eval_mse_initial, r.eval_mse_final};
            log << "eval MSE " << fmt("%.6g", r.eval_mse_initial) << " -> " << fmt("%.6g", r.eval_mse_final) << '\n';
            break;
        }
        case TrainStage::Mapper: {
            const auto r = train_mapper(corpus, cfg, out, resume, progress_printer(cfg, {"loss", "l1"}, log));
            write_coef(out / "canonical.coef", CoefMatrix::from_matrix(corpus.assets.keypoints.canonical));
            summary = {r.eval_l1_initial, r.eval_l1_final};
            log << "eval L1 " << fmt("%.6g", r.eval_l1_initial) << " -> " << fmt("%.6g", r.eval_l1_final) << '\n';
            break;
        }
    }
    log << "checkpoint written to " << out.string() << '\n';
    return summary;
}

// ---- generation ---------------------------------------------------------------------------

std::vector<double> blink_schedule(const std::string& spec, int frames, double fps, std::uint64_t seed) {
    if (frames < 0) throw InvalidArgument("blink_schedule: negative frame count");
    if (spec != "auto") {
        double v = 0.0;
        std::size_t used = 0;
        try {
            v = std::stod(spec, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != spec.size() || !(v >= 0.0 && v <= 1.0)) {
            throw InvalidArgument("blink spec must be 'auto' or a number in [0, 1], got '" + spec + "'");
        }
        return std::vector<double>(static_cast<std::size_t>(frames), v);
    }
    std::vector<double> z(static_cast<std::size_t>(frames), kBlinkOpenLevel);
    Rng rng(derive_seed(seed, kStreamBlink));
    for (double t = rng.uniform(2.0, 4.0);; t += rng.uniform(2.0, 4.0)) {
        const long start = std::lround(t * fps);
        if (start >= frames) break;
        for (long f = start; f < std::min<long>(frames, start + kBlinkPulseFrames); ++f) z[static_cast<std::size_t>(f)] = 0.0;
    }
    return z;
}

int cmd_generate(const GenerateArgs& args, std::ostream& log) {
    const CoefMatrix ref = read_coef(args.ref);
    const MotionSequence ref_rows = motion_sequence_from(ref.to_matrix());
    if (ref_rows.rows() != 1) throw FormatError(args.ref.string() + ": expected a single 70-dim reference row");
    const ExpressionVector beta0 = ref_rows.row(0).head<kExpressionDim>().transpose();
    const PoseCoeffs rho0 = PoseCoeffs::from(std::span<const double>(ref_rows.data() + kExpressionDim, kPoseDim));

    for (const auto& [dir, file] : {std::pair{args.expnet_dir, "landmark_model.coef"}, std::pair{args.mapper_dir, "canonical.coef"}}) {
        if (!fs::exists(dir / file)) throw std::runtime_error("missing " + (dir / file).string() + " (train the stage first)");
    }
    const auto expnet = load_expnet(args.expnet_dir);
    const auto vae = load_posevae(args.posevae_dir);
    const auto mapper = load_mapper(args.mapper_dir);
    const BlendshapeLandmarkModel lm = BlendshapeLandmarkModel::from_flat(read_coef(args.expnet_dir / "landmark_model.coef").row(0));
    const Eigen::MatrixXd canonical = read_coef(args.mapper_dir / "canonical.coef").to_matrix();
    if (canonical.rows() != mapper->config().num_keypoints) throw FormatError("canonical.coef: keypoint count differs from the mapper");

    const Waveform audio = ingest_wav(args.wav);
    const MelSpectrogram mel = mel_spectrogram(audio);
    const int frames = video_frame_count(audio.duration(), args.fps);
    if (frames < 1) throw EmptyInput("generate: audio shorter than one video frame");
    const std::vector<MelWindow> windows = frame_windows(mel, frames, args.fps);
    const std::vector<double> blink = blink_schedule(args.blink, frames, args.fps, args.seed);

    const std::vector<ExpressionVector> betas = expnet->generate(windows, beta0, blink);
    const PoseSequence poses = sample_poses(*vae, rho0, windows, args.style, frames, args.seed);

    MotionSequence motion(frames, kMotionDim);
    for (int t = 0; t < frames; ++t) {
        motion.row(t).head<kExpressionDim>() = betas[static_cast<std::size_t>(t)].transpose();
        motion.row(t).tail<kPoseDim>() = poses.row(t);
    }
    const std::vector<KeypointMotion> km = mapper->predict_sequence(motion);
    const int k = static_cast<int>(canonical.rows());
    Eigen::MatrixXd kp_rows(frames, 3 * k);
    std::vector<Eigen::MatrixXd> traces;
    for (int t = 0; t < frames; ++t) {
        const Eigen::MatrixXd x = transform_keypoints(canonical, km[static_cast<std::size_t>(t)]);
        for (int i = 0; i < k; ++i)
            for (int a = 0; a < 3; ++a) kp_rows(t, 3 * i + a) = x(i, a);
        traces.push_back(x.leftCols(2));
    }

    fs::create_directories(args.out);
    write_coef(args.out / "coeffs.coef", CoefMatrix::from_matrix(motion));
    write_coef(args.out / "keypoints.coef", CoefMatrix::from_matrix(kp_rows));
    write_coef(args.out / "blink.coef", CoefMatrix::from_matrix(column(blink)));
    write_trace_map(trace_map(traces), args.out / "trace.ppm", args.out / "trace.csv");
    write_wav(args.out / "audio.wav", WavData{kSampleRate, 1, audio.samples}, SampleFormat::Float32);

    // Metrics on the values as stored (float32), so eval reproduces them.
    const PoseSequence stored = read_coef(args.out / "coeffs.coef").to_matrix().rightCols<kPoseDim>();
    const double ba = beat_align(audio_beats(mel), motion_beats(stored, args.fps));
    std::vector<Landmarks2D> lms;
    double eye_mean = 0.0;
    for (const auto& b : betas) {
        lms.push_back(landmarks_for(lm, b));
        eye_mean += eye_ratio(lms.back());
    }
    eye_mean /= frames;
    std::string recovery = "nan";
    try {
        recovery = format_double(blink_recovery(lms, blink));
    } catch (const DegenerateInput&) {
        // Constant blink or constant eyes: correlation undefined.
    }
    std::ostringstream metrics;
    metrics << "frames,fps,style,beat_align,eye_ratio_mean,blink_recovery\n"
            << frames << ',' << format_double(args.fps) << ',' << args.style << ',' << format_double(ba) << ','
            << format_double(eye_mean) << ',' << recovery << '\n';
    write_text_file(args.out / "metrics.csv", metrics.str());

    std::ostringstream meta;
    meta << "frames = " << frames << "\nfps = " << format_double(args.fps) << "\nstyle = " << args.style
         << "\nseed = " << args.seed << "\nblink = " << args.blink << "\nkeypoints = " << k
         << "\nwav_checksum = " << file_checksum(args.wav) << "\nref_checksum = " << file_checksum(args.ref) << '\n';
    write_text_file(args.out / "metadata.txt", meta.str());
    log << "generated " << frames << " frames into " << args.out.string() << '\n';
    return frames;
}

// ---- evaluation ---------------------------------------------------------------------------

namespace {

struct EvalItem {
    std::string name;
    PoseSequence poses;
    Waveform audio;
    std::vector<ExpressionVector> betas;
    std::vector<double> blink;  // empty when not on record
};

std::vector<ExpressionVector> beta_rows(const Eigen::MatrixXd& m) {
    std::vector<ExpressionVector> out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m.row(r).head<kExpressionDim>().transpose());
    return out;
}

EvalItem load_generated(const fs::path& dir) {
    EvalItem it;
    it.name = dir.filename().string();
    const Eigen::MatrixXd coeffs = motion_sequence_from(read_coef(dir / "coeffs.coef").to_matrix());
    it.poses = coeffs.rightCols<kPoseDim>();
    it.betas = beta_rows(coeffs);
    it.audio = ingest_wav(dir / "audio.wav");
    if (fs::exists(dir / "blink.coef")) {
        const CoefMatrix z = read_coef(dir / "blink.coef");
        it.blink.assign(z.data.begin(), z.data.end());
    }
    return it;
}

std::vector<EvalItem> load_corpus_items(const fs::path& dir) {
    std::vector<EvalItem> items;
    std::istringstream in(read_text_file(dir / "manifest.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() < 7) throw FormatError("manifest.csv: short row '" + line + "'");
        EvalItem it;
        it.name = cells[0];
        it.poses = read_coef(dir / cells[4]).to_matrix();
        it.betas = beta_rows(read_coef(dir / cells[5]).to_matrix());
        it.audio = ingest_wav(dir / cells[3]);
        items.push_back(std::move(it));
    }
    return items;
}

}  // namespace

void cmd_eval(const fs::path& generated, const fs::path& corpus_dir, const RunConfig& cfg, const fs::path& out_csv,
              std::ostream& log) {
    std::vector<EvalItem> items;
    if (fs::exists(generated / "manifest.csv")) {
        items = load_corpus_items(generated);
    } else if (fs::exists(generated / "coeffs.coef")) {
        items.push_back(load_generated(generated));
    } else if (fs::is_directory(generated)) {
        std::vector<fs::path> dirs;
        for (const auto& e : fs::directory_iterator(generated))
            if (e.is_directory() && fs::exists(e.path() / "coeffs.coef")) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) items.push_back(load_generated(d));
    }
    if (items.empty()) throw EmptyInput("eval: no generated sequences under " + generated.string());

    const bool have_lm = fs::exists(corpus_dir / "landmark_model.coef");
    std::unique_ptr<BlendshapeLandmarkModel> lm;
    if (have_lm) {
        lm = std::make_unique<BlendshapeLandmarkModel>(
            BlendshapeLandmarkModel::from_flat(read_coef(corpus_dir / "landmark_model.coef").row(0)));
    }

    std::ostringstream csv;
    csv << "scope,metric,value\n";
    double ba_sum = 0.0, rec_sum = 0.0;
    int rec_n = 0;
    Eigen::Index min_frames = items.front().poses.rows();
    for (const auto& it : items) {
        const double ba = beat_align(audio_beats(mel_spectrogram(it.audio)), motion_beats(it.poses, cfg.fps),
                                     BeatAlignConfig{cfg.beat_sigma});
        ba_sum += ba;
        csv << it.name << ",beat_align," << format_double(ba) << '\n';
        min_frames = std::min(min_frames, it.poses.rows());
        if (lm && !it.blink.empty() && it.blink.size() == it.betas.size()) {
            std::vector<Landmarks2D> lms;
            for (const auto& b : it.betas) lms.push_back(landmarks_for(*lm, b));
            try {
                const double r = blink_recovery(lms, it.blink);
                csv << it.name << ",blink_recovery," << format_double(r) << '\n';
                rec_sum += r;
                ++rec_n;
            } catch (const DegenerateInput&) {
                csv << it.name << ",blink_recovery,nan\n";
            }
        }
    }
    csv << "all,beat_align_mean," << format_double(ba_sum / static_cast<double>(items.size())) << '\n';
    if (rec_n > 0) csv << "all,blink_recovery_mean," << format_double(rec_sum / rec_n) << '\n';

    std::vector<PoseSequence> seqs;
    for (const auto& it : items) seqs.push_back(it.poses.topRows(min_frames));
    const double div = pose_diversity(seqs);  // throws for a single sequence
    csv << "all,diversity," << format_double(div) << '\n';
    csv << "all,sequences," << items.size() << '\n';
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    write_text_file(out_csv, csv.str());
    log << "evaluated " << items.size() << " sequences: diversity " << fmt("%.6g", div) << ", beat align "
        << fmt("%.6g", ba_sum / static_cast<double>(items.size())) << '\n';
}

// ---- gradient check -----------------------------------------------------------------------

int cmd_gradcheck(const std::string& module, std::uint64_t seed, const std::string& corrupt_group, std::ostream& log) {
    nn::GradCheckOptions opt;
    opt.h = 1e-5;
    opt.max_entries_per_group = 48;
    opt.kink_screen = true;
    opt.sample_seed = derive_seed(seed, 0x6C);
    opt.corrupt_group = corrupt_group;
    opt.corrupt_factor = corrupt_group.empty() ? 1.0 : 1.5;
    const auto suites = run_gradchecks(module, seed, opt);
    if (!corrupt_group.empty()) {
        bool found = false;
        for (const auto& s : suites)
            for (const auto& g : s.groups) found = found || g.name == corrupt_group;
        if (!found) throw UsageError("gradcheck: no parameter group named '" + corrupt_group + "'");
    }
    print_gradcheck(log, suites);
    const bool ok = std::all_of(suites.begin(), suites.end(), [](const GradCheckSuite& s) { return s.passed(); });
    return ok ? 0 : 1;
}

}  // namespace sadcoeff
