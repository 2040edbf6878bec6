#include "doctest.h"

#include "fixtures.hpp"

#include "sadcoeff/cli.hpp"
#include "sadcoeff/errors.hpp"
#include "sadcoeff/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace sadcoeff;

TEST_CASE("generators are seeded") {
    const BlendshapeLandmarkModel a = gen_landmark_model(7), b = gen_landmark_model(7), c = gen_landmark_model(8);
    CHECK(a.to_flat() == b.to_flat());
    CHECK(a.to_flat() != c.to_flat());

    const Waveform w1 = gen_audio_for_clip(3, 25, 25.0), w2 = gen_audio_for_clip(3, 25, 25.0);
    CHECK(w1.samples.size() == 16000);
    CHECK(w1.samples == w2.samples);

    const PoseSequence p0 = gen_pose_sequence(11, 2, 50, 25.0), p1 = gen_pose_sequence(12, 2, 50, 25.0);
    CHECK(p0.rows() == 50);
    CHECK((p0 - p1).norm() > 0.0);
}

TEST_CASE("clips of one style differ") {
    const LipTeacherOracle t = gen_lip_teacher(1);
    const SynthClip a = gen_clip(1, 3, 0, 40, 25.0, t), b = gen_clip(1, 3, 1, 40, 25.0, t);
    CHECK((a.poses - b.poses).norm() > 0.0);
    CHECK(a.windows.size() == 40);
    CHECK(a.teacher.size() == 40);
}

TEST_CASE("lip teacher at the normalisation mean returns the clamped bias") {
    const LipTeacherOracle t = gen_lip_teacher(2);
    MelWindow w;
    w.window.setConstant(kMelNormMean);
    const ExpressionVector b = t.apply(w);
    for (int k = 0; k < kExpressionDim; ++k) {
        if (is_lip_coefficient(k)) CHECK(b[k] == std::clamp(t.bias[k - kLipBegin], -kLipClamp, kLipClamp));
        else CHECK(b[k] == 0.0);
    }
}

TEST_CASE("eye coefficient hits the requested ratio") {
    const BlendshapeLandmarkModel lm = gen_landmark_model(4);
    for (double z : {0.0, 0.3, 0.5, 1.0}) {
        MotionCoeffs m;
        for (int k = kEyeBegin; k < kEyeBegin + kEyeCount; ++k) m.beta.beta[k] = eye_coefficient_for_ratio(z);
        // The landmark model is stored at float32 precision.
        CHECK(std::abs(eye_ratio(project_landmarks(lm, m)) - z) < 1e-6);
    }
}

TEST_CASE("corpus on disk") {
    const Corpus& c = tiny_corpus();
    CHECK(c.clips.size() == 4);
    CHECK(c.num_styles == 2);
    for (const auto& clip : c.clips) CHECK(clip.frames() == 40);

    const auto dir = unit_dir("corpus_twice");
    RunConfig cfg = tiny_config();
    write_corpus(cfg, dir / "a");
    write_corpus(cfg, dir / "b");
    for (const auto& e : std::filesystem::directory_iterator(dir / "a"))
        CHECK(file_checksum(e.path()) == file_checksum(dir / "b" / e.path().filename()));

    std::istringstream manifest(read_text_file(dir / "a" / "manifest.csv"));
    int rows = -1;
    for (std::string line; std::getline(manifest, line);) ++rows;
    CHECK(rows == cfg.num_styles * cfg.clips_per_style);

    cfg.clips_per_style = 0;
    CHECK_THROWS(write_corpus(cfg, dir / "c"));
}

TEST_CASE("cli helpers") {
    CHECK(parse_stage("posevae") == TrainStage::PoseVAE);
    CHECK_THROWS_AS(parse_stage("vocoder"), UsageError);

    const auto constant = blink_schedule("0.25", 10, 25.0, 1);
    CHECK(constant == std::vector<double>(10, 0.25));
    CHECK_THROWS_AS(blink_schedule("1.5", 10, 25.0, 1), InvalidArgument);
    CHECK_THROWS_AS(blink_schedule("often", 10, 25.0, 1), InvalidArgument);

    const auto z = blink_schedule("auto", 500, 25.0, 3);
    CHECK(z == blink_schedule("auto", 500, 25.0, 3));
    std::vector<int> starts;
    for (int t = 0; t < 500; ++t) {
        CHECK((z[static_cast<std::size_t>(t)] == 0.0 || z[static_cast<std::size_t>(t)] == kBlinkOpenLevel));
        if (z[static_cast<std::size_t>(t)] == 0.0 && (t == 0 || z[static_cast<std::size_t>(t - 1)] != 0.0)) starts.push_back(t);
    }
    REQUIRE(starts.size() >= 4);
    CHECK(starts[0] >= 50);
    for (std::size_t i = 1; i < starts.size(); ++i) {
        CHECK(starts[i] - starts[i - 1] >= 50);
        CHECK(starts[i] - starts[i - 1] <= 100);
    }
}

TEST_CASE("eval needs two sequences for diversity") {
    const auto dir = unit_dir("eval_single");
    RunConfig cfg = tiny_config();
    cfg.num_styles = 1;
    cfg.clips_per_style = 1;
    write_corpus(cfg, dir / "corpus");
    std::ostringstream log;
    CHECK_THROWS_AS(cmd_eval(dir / "corpus", dir / "corpus", cfg, dir / "eval.csv", log), InvalidArgument);

    cfg.clips_per_style = 2;
    write_corpus(cfg, dir / "corpus2");
    cmd_eval(dir / "corpus2", dir / "corpus2", cfg, dir / "eval2.csv", log);
    const std::string csv = read_text_file(dir / "eval2.csv");
    CHECK(csv.rfind("scope,metric,value\n", 0) == 0);
    CHECK(csv.find("diversity") != std::string::npos);
}
