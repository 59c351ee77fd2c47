#pragma once

#include <limits>
#include <vector>

#include "stormcast/checkpoint.hpp"
#include "stormcast/evalkit.hpp"

namespace stormcast {

// Patience-based stopping on validation loss. An epoch only resets the
// patience counter when it beats the best loss by at least min_delta, but
// any strict minimum still becomes the checkpointed epoch.
class EarlyStopper {
public:
    EarlyStopper(double min_delta, int patience) : min_delta_(min_delta), patience_(patience) {}

    struct Decision {
        bool new_minimum = false;  // caller should snapshot parameters
        bool stop = false;
    };

    Decision observe(int epoch, double val_loss) {
        Decision d;
        bool delta_improved = val_loss < best_ - min_delta_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch;
            d.new_minimum = true;
        }
        if (delta_improved) {
            stale_ = 0;
        } else {
            ++stale_;
            if (stale_ >= patience_) d.stop = true;
        }
        return d;
    }

    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }

private:
    double min_delta_;
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int stale_ = 0;
};

// Full training run on a split: graph and scaler fitted on train only, pair
// sampling, shuffled mini-batches, SmoothL1 + Adam, per-epoch validation with
// early stopping. Returns the best-validation checkpoint; its history carries
// wall times in memory (they are not serialized).
Checkpoint train(const SplitSet& split, const ModelConfig& model_config,
                 const TrainConfig& train_config);

struct FoldResult {
    Checkpoint checkpoint;
    BucketReport report;
};

// Stratified k-fold cross validation: each fold serves as the test set once,
// validation is carved out of the remainder, and graph/scaler are rebuilt per
// round from that round's training portion. Rounds may run on `jobs` threads;
// results are deterministic either way.
std::vector<FoldResult> kfold(const std::vector<Trajectory>& trajectories, int k,
                              const ModelConfig& model_config, const TrainConfig& train_config,
                              double val_fraction = 1.0 / 9.0, int jobs = 1);

}  // namespace stormcast
