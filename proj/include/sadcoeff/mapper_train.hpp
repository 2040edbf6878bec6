#pragma once

// MappingNet training against the frozen keypoint oracle: 20 x L1 between
// the transformed canonical keypoints and the oracle's keypoints.

#include "sadcoeff/kpmapper.hpp"
#include "sadcoeff/synthdata.hpp"
#include "sadcoeff/train.hpp"

#include <filesystem>
#include <memory>

namespace sadcoeff {

struct MapperBatch {
    nn::Tensor input;   // [B, 70, 1, 5]
    nn::Tensor target;  // [B, 3K] oracle keypoints
};

MapperBatch sample_mapper_batch(const Corpus& corpus, int size, Rng& rng);

// Unweighted keypoint L1 of the mapper's prediction.
nn::Tensor mapper_l1(const MappingNet& net, const MapperBatch& batch, const Eigen::MatrixXd& canonical);
// lambda_l1 * mapper_l1
nn::Tensor mapper_loss(const MappingNet& net, const MapperBatch& batch, const Eigen::MatrixXd& canonical,
                       double lambda_l1);

MapperConfig mapper_config(const RunConfig& cfg);
MapperBatch mapper_eval_batch(const Corpus& corpus, const RunConfig& cfg);

struct MapperTrainResult {
    std::unique_ptr<MappingNet> net;
    TrainHistory history;  // step,loss,loss_l1
    double eval_l1_initial = 0.0;
    double eval_l1_final = 0.0;
};

MapperTrainResult train_mapper(const Corpus& corpus, const RunConfig& cfg, const std::filesystem::path& out_dir,
                               bool resume = false, const ProgressFn& progress = {});

std::unique_ptr<MappingNet> load_mapper(const std::filesystem::path& dir);

}  // namespace sadcoeff
