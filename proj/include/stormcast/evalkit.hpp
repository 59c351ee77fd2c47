#pragma once

#include <array>
#include <string>
#include <vector>

#include "stormcast/checkpoint.hpp"
#include "stormcast/corpus.hpp"

namespace stormcast {

// Sequence-length buckets for MAE reporting. Length-16 inputs land in the
// last bucket, hence its label.
extern const std::array<const char*, 3> kBucketLabels;  // "0-5", "6-10", "11-16"
int bucket_of(int seq_len);

struct BucketStat {
    std::string label;
    std::size_t count = 0;
    double mae_lat = 0.0;
    double mae_lon = 0.0;
};

struct BucketReport {
    std::vector<BucketStat> buckets;  // one entry per label, in order
    double overall_lat = 0.0;         // macro average over non-empty buckets
    double overall_lon = 0.0;
    std::string variant;
    int fold_id = -1;
    std::size_t total_pairs = 0;

    std::string to_csv() const;
    std::string to_json() const;
};

// Predicts every test pair with the checkpoint's model, converts back to the
// global frame, and aggregates absolute errors per sequence-length bucket.
BucketReport evaluate(const Checkpoint& checkpoint, const std::vector<ExamplePair>& test_pairs);

struct AggregateStat {
    std::string label;
    std::size_t folds = 0;  // folds where the bucket was non-empty
    double mean_lat = 0.0;
    double std_lat = 0.0;
    double mean_lon = 0.0;
    double std_lon = 0.0;
};

struct CrossValSummary {
    std::string variant;
    std::vector<AggregateStat> buckets;
    AggregateStat overall;

    std::string to_json() const;
};

CrossValSummary aggregate_folds(const std::vector<BucketReport>& reports);

// Next-location prediction for a raw observation prefix (last 16 steps used).
std::array<double, 2> predict(const Checkpoint& checkpoint,
                              const std::vector<Observation>& prefix);

}  // namespace stormcast
