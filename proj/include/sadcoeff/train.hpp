#pragma once

// Shared training plumbing: loss history, checkpoint files and the
// non-finite-loss guard.
//
// A checkpoint directory holds, per parameter set `<name>`:
//   <name>_params.coef   flat parameters (rows = count, dim = 1)
//   <name>_adam_m.coef   Adam first moments
//   <name>_adam_v.coef   Adam second moments
//   <name>_manifest.txt  one "name shape" line per tensor
// plus state.txt ("step = N") and config.txt (the run config).

#include "sadcoeff/io.hpp"
#include "sadcoeff/nn.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace sadcoeff {

struct TrainHistory {
    std::vector<std::string> columns;  // excluding "step"
    std::vector<long> steps;
    std::vector<std::vector<double>> values;

    void add(long step, std::vector<double> row);
    std::string to_csv() const;
    static TrainHistory from_csv(const std::string& text);
    // Column by name, in row order.
    std::vector<double> column(const std::string& name) const;
};

void save_param_set(const std::filesystem::path& dir, const std::string& name, const nn::ParamSet& params,
                    const nn::Adam& opt);
// Loads parameters and optimizer state saved by save_param_set; the tensor
// manifest must match the live parameter set.
void load_param_set(const std::filesystem::path& dir, const std::string& name, nn::ParamSet& params, nn::Adam* opt);

void save_train_state(const std::filesystem::path& dir, long step, const RunConfig& cfg);
long load_train_step(const std::filesystem::path& dir);
RunConfig load_train_config(const std::filesystem::path& dir);

// Throws NonFiniteLoss naming the stage, step and component.
void require_finite(double value, const char* stage, long step, const char* component);

// Progress sink for trainers (step, history row); may be empty.
using ProgressFn = std::function<void(long, const std::vector<double>&)>;

}  // namespace sadcoeff
