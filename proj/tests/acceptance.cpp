// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   sadcoeff_acceptance [--profile tests/desk_profile.cfg] [--work DIR] [--keep]
//
// Training criteria use the default corpus and step budgets with the
// tiny-model profile; the trained checkpoints are reused by the blink,
// diversity, determinism and frame-accounting checks.

#include "sadcoeff/audio.hpp"
#include "sadcoeff/cli.hpp"
#include "sadcoeff/core3dmm.hpp"
#include "sadcoeff/errors.hpp"
#include "sadcoeff/expnet.hpp"
#include "sadcoeff/io.hpp"
#include "sadcoeff/metrics.hpp"
#include "sadcoeff/posevae.hpp"
#include "sadcoeff/synthdata.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace sadcoeff;

namespace {

// Tolerances.
constexpr double kAssembleRel = 1e-6;
constexpr double kKlMonteCarloRel = 0.02;
constexpr double kKlExact = 1e-12;
constexpr double kConvergenceRatio = 0.10;
constexpr double kBlinkPearson = 0.8;
constexpr double kBeatAlignTol = 1e-5;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failed = 0;

void report(int id, const char* name, const Outcome& o, double seconds) {
    std::printf("[%s] %2d %-26s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), seconds);
    std::fflush(stdout);
    if (!o.pass) ++g_failed;
}

void run(int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// ---- oracles ------------------------------------------------------------------------------

// S = mean + U_id alpha + U_exp beta, one vertex coordinate at a time.
Eigen::MatrixXd assemble_oracle(const BlendshapeModel& m, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const int n = m.num_vertices();
    Eigen::MatrixXd s(n, 3);
    for (int v = 0; v < n; ++v) {
        for (int c = 0; c < 3; ++c) {
            double acc = m.mean_shape()(v, c);
            for (int k = 0; k < a.size(); ++k) acc += m.id_basis()(3 * v + c, k) * a[k];
            for (int k = 0; k < b.size(); ++k) acc += m.exp_basis()(3 * v + c, k) * b[k];
            s(v, c) = acc;
        }
    }
    return s;
}

// E_q[log q(z) - log p(z)] by sampling.
double kl_monte_carlo(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var, long samples, Rng& rng) {
    double acc = 0.0;
    for (long s = 0; s < samples; ++s) {
        double term = 0.0;
        for (int d = 0; d < mu.size(); ++d) {
            const double eps = rng.normal();
            const double z = mu[d] + std::exp(0.5 * log_var[d]) * eps;
            term += -0.5 * log_var[d] - 0.5 * eps * eps + 0.5 * z * z;
        }
        acc += term;
    }
    return acc / static_cast<double>(samples);
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

std::map<std::string, std::uint64_t> dir_checksums(const fs::path& dir) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = file_checksum(e.path());
    }
    return out;
}

void write_tone(const fs::path& path, double seconds, double hz) {
    WavData w;
    w.sample_rate = kSampleRate;
    w.channels = 1;
    const int n = static_cast<int>(std::lround(seconds * kSampleRate));
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        // Amplitude-modulated so the onset detector has something to find.
        w.interleaved.push_back(0.4 * std::sin(2.0 * std::numbers::pi * hz * t) * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 2.0 * t)));
    }
    write_wav(path, w, SampleFormat::Pcm16);
}

void write_ref(const fs::path& path, const SynthClip& clip) {
    Eigen::MatrixXd row(1, kMotionDim);
    row.leftCols(kExpressionDim) = clip.beta0.transpose();
    const auto pose = clip.rho0.to_array();
    for (int d = 0; d < kPoseDim; ++d) row(0, kExpressionDim + d) = pose[static_cast<std::size_t>(d)];
    write_coef(path, CoefMatrix::from_matrix(row));
}

double mean_eye_ratio(const BlendshapeLandmarkModel& lm, const std::vector<ExpressionVector>& betas,
                      std::vector<double>* per_frame = nullptr) {
    double acc = 0.0;
    for (const auto& b : betas) {
        MotionCoeffs m;
        m.beta.beta = b;
        const double r = eye_ratio(project_landmarks(lm, m));
        if (per_frame) per_frame->push_back(r);
        acc += r;
    }
    return acc / static_cast<double>(betas.size());
}

struct Args {
    fs::path profile;
    fs::path work;
    bool keep = false;
};

Args parse_args(int argc, char** argv) {
    Args a;
#ifdef SADCOEFF_DESK_PROFILE
    a.profile = SADCOEFF_DESK_PROFILE;
#endif
    a.work = fs::temp_directory_path() / ("sadcoeff_acceptance_" + std::to_string(::getpid()));
    for (int i = 1; i < argc; ++i) {
        const std::string s = argv[i];
        if (s == "--profile" && i + 1 < argc) a.profile = argv[++i];
        else if (s == "--work" && i + 1 < argc) a.work = argv[++i];
        else if (s == "--keep") a.keep = true;
        else {
            std::fprintf(stderr, "usage: %s [--profile FILE] [--work DIR] [--keep]\n", argv[0]);
            std::exit(2);
        }
    }
    return a;
}

}  // namespace

int main(int argc, char** argv) {
    const Args args = parse_args(argc, argv);
    const RunConfig base;
    RunConfig desk = args.profile.empty() ? base : load_config(args.profile);
    validate_config(desk);
    fs::create_directories(args.work);
    std::ostringstream log;  // training chatter, dumped on failure

    run(1, "assemble_shape oracle", [] {
        double worst = 0.0;
        for (int c = 0; c < 100; ++c) {
            Rng rng(derive_seed(0xA1, static_cast<std::uint64_t>(c)));
            const BlendshapeModel m = gen_blendshape_model(rng.next_u64(), kNumLandmarks + static_cast<int>(rng.index(200)));
            Eigen::VectorXd a(kIdentityDim), b(kExpressionDim);
            for (auto& v : a) v = rng.normal();
            for (auto& v : b) v = rng.normal();
            const Eigen::MatrixXd got = assemble_shape(m, std::span<const double>(a.data(), a.size()),
                                                       std::span<const double>(b.data(), b.size()));
            const Eigen::MatrixXd want = assemble_oracle(m, a, b);
            worst = std::max(worst, (got - want).norm() / want.norm());
        }
        return Outcome{worst <= kAssembleRel, "max rel " + fmt("%.2e", worst) + " over 100 cases"};
    });

    run(2, "eye geometry golden", [] {
        Landmarks2D l;
        const auto set = [&](int i, double x, double y) { l.points.row(i) << x, y; };
        set(36, 0, 0), set(39, 4, 0), set(37, 1, 1), set(38, 3, 1), set(40, 3, -1), set(41, 1, -1);
        set(42, 10, 0), set(45, 14, 0), set(43, 11, 1), set(44, 13, 1), set(46, 13, -1), set(47, 11, -1);
        const EyeGeometry g = eye_geometry(l);
        const bool ok = g.width == 4.0 && g.height == 4.0 && g.ratio == 1.0;
        return Outcome{ok, "Ew=" + fmt("%.17g", g.width) + " Eh=" + fmt("%.17g", g.height) + " R=" + fmt("%.17g", g.ratio)};
    });

    run(3, "loss weight wiring", [&] {
        const double le = combine_exp_loss(exp_loss_weights(base), 1.0, 1.0, 1.0);
        const double lp = combine_pose_loss(pose_loss_weights(base), 1.0, 1.0, 1.0);
        const bool ok = le == 2.0 + 0.01 + 0.01 && lp == 1.0 + 1.0 + 0.7;
        return Outcome{ok, "L_exp=" + fmt("%.17g", le) + " L_pose=" + fmt("%.17g", lp)};
    });

    run(4, "gradient checks", [] {
        std::ostringstream out;
        const int code = cmd_gradcheck("all", 1, "", out);
        std::ostringstream neg;
        const int corrupt = cmd_gradcheck("kpmapper", 1, "mapper.head_tr.weight", neg);
        double worst = 0.0;
        std::istringstream in(out.str());
        for (std::string line; std::getline(in, line);) {
            const auto p = line.find("max_rel=");
            if (p != std::string::npos) worst = std::max(worst, std::stod(line.substr(p + 8)));
        }
        const bool ok = code == 0 && corrupt == 1;
        return Outcome{ok, "exit " + std::to_string(code) + ", max rel " + fmt("%.2e", worst) +
                               ", corrupted control exit " + std::to_string(corrupt)};
    });

    run(5, "KL closed form", [] {
        Rng rng(0xA5);
        double worst = 0.0;
        for (int g = 0; g < 10; ++g) {
            const int dz = 1 + static_cast<int>(rng.index(8));
            Eigen::VectorXd mu(dz), lv(dz);
            for (int d = 0; d < dz; ++d) {
                mu[d] = rng.normal(0.0, 1.0);
                lv[d] = rng.uniform(-1.0, 1.0);
            }
            const double closed = kl_to_standard_normal(mu, lv);
            const double mc = kl_monte_carlo(mu, lv, 1000000, rng);
            worst = std::max(worst, std::abs(mc - closed) / closed);
        }
        const double zero = kl_to_standard_normal(Eigen::VectorXd::Zero(64), Eigen::VectorXd::Zero(64));
        const double unit = kl_to_standard_normal(Eigen::VectorXd::Ones(64), Eigen::VectorXd::Zero(64));
        const bool ok = worst < kKlMonteCarloRel && std::abs(zero) <= kKlExact && std::abs(unit - 32.0) <= kKlExact;
        return Outcome{ok, "MC max rel " + fmt("%.4f", worst) + ", zero case " + fmt("%.3g", zero) + ", unit case " +
                               fmt("%.17g", unit)};
    });

    const fs::path corpus_dir = args.work / "corpus";
    const fs::path ckpt = args.work / "ckpt";
    bool trained = false;
    run(6, "training convergence", [&] {
        RunConfig cfg = desk;
        cfg.corpus_dir = corpus_dir.string();
        cmd_datagen(cfg, corpus_dir, log);
        std::string detail;
        bool ok = true;
        for (TrainStage s : {TrainStage::ExpNet, TrainStage::PoseVAE, TrainStage::Mapper}) {
            const auto t0 = std::chrono::steady_clock::now();
            const TrainSummary r = cmd_train(s, cfg, corpus_dir, ckpt / stage_name(s), false, log);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            ok = ok && r.ratio() <= kConvergenceRatio;
            detail += std::string(detail.empty() ? "" : "; ") + stage_name(s) + " " + fmt("%.4f", r.ratio()) + " (" +
                      fmt("%.0fs", secs) + ")";
        }
        trained = true;
        return Outcome{ok, detail};
    });

    const auto need_training = [&] {
        if (!trained) throw std::runtime_error("training did not complete");
    };

    run(7, "blink controllability", [&] {
        need_training();
        const Corpus corpus = load_corpus(corpus_dir);
        const auto net = load_expnet(ckpt / "expnet");
        // Held out: a clip seed the corpus never uses.
        const SynthClip clip = gen_clip(derive_seed(desk.seed, 0xAC7), 0, 0, 100, desk.fps, corpus.assets.lip_teacher);
        const auto& lm = corpus.assets.landmarks;
        std::vector<double> zs{0.0, 0.25, 0.5, 0.75, 1.0}, ratios;
        for (double z : zs) {
            const std::vector<double> blink(clip.windows.size(), z);
            ratios.push_back(mean_eye_ratio(lm, net->generate(clip.windows, clip.beta0, blink)));
        }
        const double rho = spearman(zs, ratios);
        bool strict = true;
        for (std::size_t i = 1; i < ratios.size(); ++i) strict = strict && ratios[i] > ratios[i - 1];
        Rng rng(0xA7);
        std::vector<double> blink(clip.windows.size());
        for (auto& z : blink) z = rng.uniform();
        std::vector<Landmarks2D> lms;
        for (const auto& b : net->generate(clip.windows, clip.beta0, blink)) {
            MotionCoeffs m;
            m.beta.beta = b;
            lms.push_back(project_landmarks(lm, m));
        }
        const double rec = blink_recovery(lms, blink);
        const bool ok = rho == 1.0 && strict && rec > kBlinkPearson;
        return Outcome{ok, "spearman " + fmt("%.3f", rho) + ", blink_recovery " + fmt("%.4f", rec)};
    });

    run(8, "beat align golden", [] {
        const std::vector<double> beats{0.4, 1.2, 2.0, 3.1};
        const double same = beat_align(beats, beats);
        const std::vector<double> a{1.0}, m{2.0}, none;
        const double one = beat_align(a, m, BeatAlignConfig{1.0});
        const double empty = beat_align(a, none);
        const bool ok = same == 1.0 && std::abs(one - 0.60653) <= kBeatAlignTol && empty == 0.0;
        return Outcome{ok, "identical " + fmt("%.17g", same) + ", offset " + fmt("%.6f", one) + ", empty " + fmt("%g", empty)};
    });

    run(9, "pose diversity", [&] {
        std::vector<PoseSequence> constant(3, PoseSequence::Constant(20, kPoseDim, 0.3));
        const double zero = pose_diversity(constant);
        std::vector<PoseSequence> two{PoseSequence::Zero(10, kPoseDim), PoseSequence::Zero(10, kPoseDim)};
        two[1].col(0).setConstant(2.0);
        const double sixth = pose_diversity(two);
        need_training();
        const Corpus corpus = load_corpus(corpus_dir);
        const auto vae = load_posevae(ckpt / "posevae");
        const SynthClip clip = gen_clip(derive_seed(desk.seed, 0xAC9), 0, 0, 100, desk.fps, corpus.assets.lip_teacher);
        std::vector<PoseSequence> multi, single;
        for (int style = 0; style < 4; ++style)
            for (std::uint64_t seed = 1; seed <= 4; ++seed)
                multi.push_back(sample_poses(*vae, clip.rho0, clip.windows, style, clip.frames(), seed));
        for (int i = 0; i < 16; ++i) single.push_back(sample_poses(*vae, clip.rho0, clip.windows, 0, clip.frames(), 1));
        const double dm = pose_diversity(multi), ds = pose_diversity(single);
        const bool ok = zero == 0.0 && sixth == 1.0 / 6.0 && dm > 0.0 && dm > ds;
        return Outcome{ok, "constant " + fmt("%g", zero) + ", two-constant " + fmt("%.17g", sixth) + ", 4x4 " +
                               fmt("%.4g", dm) + " vs single " + fmt("%.4g", ds)};
    });

    const fs::path wav = args.work / "tone_1s.wav";
    const fs::path ref = args.work / "ref.coef";
    const auto generate_into = [&](const fs::path& out, const fs::path& audio) {
        GenerateArgs g;
        g.wav = audio;
        g.ref = ref;
        g.expnet_dir = ckpt / "expnet";
        g.posevae_dir = ckpt / "posevae";
        g.mapper_dir = ckpt / "mapper";
        g.out = out;
        g.style = 3;
        g.seed = 7;
        return cmd_generate(g, log);
    };

    run(10, "determinism", [&] {
        RunConfig small = desk;
        small.num_styles = 4;
        small.clips_per_style = 2;
        small.frames_per_clip = 50;
        cmd_datagen(small, args.work / "det_a", log);
        cmd_datagen(small, args.work / "det_b", log);
        const auto da = dir_checksums(args.work / "det_a"), db = dir_checksums(args.work / "det_b");
        need_training();
        const Corpus corpus = load_corpus(corpus_dir);
        write_ref(ref, corpus.clips.front());
        const fs::path long_wav = args.work / "tone_3s.wav";
        write_tone(long_wav, 3.0, 220.0);
        generate_into(args.work / "gen_a", long_wav);
        generate_into(args.work / "gen_b", long_wav);
        const auto ga = dir_checksums(args.work / "gen_a"), gb = dir_checksums(args.work / "gen_b");
        const bool ok = !da.empty() && da == db && !ga.empty() && ga == gb;
        return Outcome{ok, "datagen " + std::to_string(da.size()) + " files " + (da == db ? "identical" : "DIFFER") +
                               ", generate " + std::to_string(ga.size()) + " files " + (ga == gb ? "identical" : "DIFFER")};
    });

    run(11, "COEF round-trip", [] {
        Rng rng(0xAB);
        const float specials[] = {0.0f,
                                  -0.0f,
                                  std::numeric_limits<float>::denorm_min(),
                                  -std::numeric_limits<float>::denorm_min(),
                                  std::numeric_limits<float>::min() / 3.0f,
                                  std::numeric_limits<float>::min(),
                                  std::numeric_limits<float>::max(),
                                  -std::numeric_limits<float>::max(),
                                  1e-38f,
                                  3.4e38f};
        long checked = 0;
        for (int trial = 0; trial < 50; ++trial) {
            CoefMatrix m;
            m.rows = 1 + static_cast<std::uint32_t>(rng.index(20));
            m.dim = 1 + static_cast<std::uint32_t>(rng.index(80));
            for (std::uint32_t i = 0; i < m.rows * m.dim; ++i) {
                float f;
                if (rng.uniform() < 0.3) {
                    f = specials[rng.index(std::size(specials))];
                } else {
                    // Any finite bit pattern.
                    do {
                        const auto bits = static_cast<std::uint32_t>(rng.next_u64());
                        std::memcpy(&f, &bits, sizeof f);
                    } while (!std::isfinite(f));
                }
                m.data.push_back(f);
            }
            const CoefMatrix back = decode_coef(encode_coef(m));
            if (back.rows != m.rows || back.dim != m.dim || back.data.size() != m.data.size()) {
                return Outcome{false, "shape changed in trial " + std::to_string(trial)};
            }
            for (std::size_t i = 0; i < m.data.size(); ++i, ++checked) {
                if (!same_bits(m.data[i], back.data[i])) return Outcome{false, "bits differ in trial " + std::to_string(trial)};
            }
        }
        return Outcome{true, std::to_string(checked) + " values bit-exact"};
    });

    run(12, "frame accounting", [&] {
        Waveform w;
        w.samples.assign(16000, 0.0);
        const int mel_frames = mel_spectrogram(w).num_frames();
        need_training();
        write_tone(wav, 1.0, 330.0);
        const fs::path out = args.work / "gen_1s";
        const int frames = generate_into(out, wav);
        std::map<std::string, long> counts;
        counts["coeffs"] = read_coef(out / "coeffs.coef").rows;
        counts["keypoints"] = read_coef(out / "keypoints.coef").rows;
        counts["blink"] = read_coef(out / "blink.coef").rows;
        std::set<long> trace_frames;
        {
            std::ifstream in(out / "trace.csv");
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) trace_frames.insert(std::stol(line.substr(0, line.find(','))));
        }
        counts["trace"] = static_cast<long>(trace_frames.size());
        {
            std::ifstream in(out / "metrics.csv");
            std::string line;
            std::getline(in, line);
            std::getline(in, line);
            counts["metrics"] = std::stol(line.substr(0, line.find(',')));
        }
        bool ok = frames == 25 && mel_frames == 77;
        std::string detail = "mel F=" + std::to_string(mel_frames) + ", frames " + std::to_string(frames);
        for (const auto& [k, v] : counts) {
            ok = ok && v == 25;
            detail += ", " + k + "=" + std::to_string(v);
        }
        return Outcome{ok, detail};
    });

    run(13, "73-dim input rejected", [&] {
        const Eigen::MatrixXd aligned = Eigen::MatrixXd::Zero(4, kAlignedMotionDim);
        bool lib = false, cli = false;
        try {
            motion_sequence_from(aligned);
        } catch (const AlignmentCoefficientsRejected&) {
            lib = true;
        }
        const fs::path bad = args.work / "ref73.coef";
        write_coef(bad, CoefMatrix::from_matrix(Eigen::MatrixXd::Zero(1, kAlignedMotionDim)));
        try {
            GenerateArgs g;
            g.wav = wav;
            g.ref = bad;
            g.out = args.work / "gen_bad";
            cmd_generate(g, log);
        } catch (const AlignmentCoefficientsRejected&) {
            cli = true;
        } catch (const std::exception&) {
        }
        return Outcome{lib && cli, std::string("library ") + (lib ? "rejects" : "accepts") + ", generate " +
                                       (cli ? "rejects" : "does not reject")};
    });

    if (g_failed > 0) {
        std::fprintf(stderr, "---- log ----\n%s", log.str().c_str());
    }
    std::printf("%d/13 criteria passed\n", 13 - g_failed);
    if (!args.keep) {
        std::error_code ec;
        fs::remove_all(args.work, ec);
    }
    return g_failed == 0 ? 0 : 1;
}
