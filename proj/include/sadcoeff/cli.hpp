#pragma once

// Subcommand bodies behind the `sadcoeff` executable. Each writes its
// artifacts under an output directory and logs progress to `log`.

#include "sadcoeff/io.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace sadcoeff {

// ---- datagen ------------------------------------------------------------------------------

// Writes the synthetic corpus; returns the clip count.
int cmd_datagen(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

// ---- training -----------------------------------------------------------------------------

enum class TrainStage { ExpNet, PoseVAE, Mapper };

// "expnet", "posevae" or "mapper"; anything else is a UsageError.
TrainStage parse_stage(const std::string& name);
const char* stage_name(TrainStage stage);

// Primary loss on the fixed evaluation batch before and after training:
// L_distill, reconstruction MSE or keypoint L1.
struct TrainSummary {
    double eval_initial = 0.0;
    double eval_final = 0.0;
    double ratio() const { return eval_final / eval_initial; }
};

// Trains one stage from the corpus alone. Besides the checkpoint, the ExpNet
// directory receives landmark_model.coef and the mapper directory
// canonical.coef, which generation needs.
TrainSummary cmd_train(TrainStage stage, const RunConfig& cfg, const std::filesystem::path& corpus_dir,
               const std::filesystem::path& out, bool resume, std::ostream& log);

// ---- generation ---------------------------------------------------------------------------

// Eye-open level between auto blinks; the generated face's neutral eye ratio.
inline constexpr double kBlinkOpenLevel = 0.5;
inline constexpr int kBlinkPulseFrames = 3;

// "auto": open level with 3-frame closures (z = 0) every uniformly random
// 2-4 s, seeded. Otherwise a constant in [0, 1].
std::vector<double> blink_schedule(const std::string& spec, int frames, double fps, std::uint64_t seed);

struct GenerateArgs {
    std::filesystem::path wav;
    std::filesystem::path ref;  // 1 x 70 COEF: beta0 (64) then rho0 (6)
    std::filesystem::path expnet_dir;
    std::filesystem::path posevae_dir;
    std::filesystem::path mapper_dir;
    std::filesystem::path out;
    int style = 0;
    std::string blink = "auto";
    std::uint64_t seed = 1;
    double fps = 25.0;
};

// Writes coeffs.coef (T x 70), keypoints.coef (T x 3K), blink.coef (T x 1),
// trace.ppm, trace.csv, metrics.csv, audio.wav and metadata.txt. Returns T.
int cmd_generate(const GenerateArgs& args, std::ostream& log);

// ---- evaluation ---------------------------------------------------------------------------

// `generated` is a generate output directory, a directory of them, or a
// corpus directory (evaluated against itself). Writes a long-format CSV
// (scope,metric,value) to `out_csv`. Needs at least two sequences for the
// diversity term.
void cmd_eval(const std::filesystem::path& generated, const std::filesystem::path& corpus_dir, const RunConfig& cfg,
              const std::filesystem::path& out_csv, std::ostream& log);

// ---- gradient check -----------------------------------------------------------------------

// Exit code: 0 iff every group is within tolerance. `corrupt_group` scales
// that group's analytic gradient by 1.5 (negative control).
int cmd_gradcheck(const std::string& module, std::uint64_t seed, const std::string& corrupt_group, std::ostream& log);

}  // namespace sadcoeff
