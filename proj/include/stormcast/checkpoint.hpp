#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stormcast/autodiff.hpp"
#include "stormcast/featurize.hpp"
#include "stormcast/geograph.hpp"
#include "stormcast/nets.hpp"

namespace stormcast {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double lr = 1e-4;
    int early_stop_patience = 5;
    double early_stop_min_delta = 1e-4;
    std::uint64_t seed = 0;
    int pairs_per_trajectory = 4;
    int k_hops = 1;
    int neighbor_cap = 64;
    double grad_clip = 0.0;     // global-norm clip; 0 disables
    bool scaler_global = false; // fit the scaler on all splits instead of train only

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_time_sec = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    std::string stop_reason;

    std::string to_jsonl() const;
};

// Everything needed to reproduce and reuse a trained model. Serialized as
// JSON with tensor payloads base64-encoded (exact, and far smaller than
// printing every double). Wall-clock timings stay out of the file so two
// identical runs serialize to identical bytes.
struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    Parameters params;
    AdamState adam;
    Scaler scaler;
    SpatialGraph graph;
    std::string graph_hash;
    TrainHistory history;

    std::string to_json() const;
    static Checkpoint from_json(const std::string& text);
    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

// FNV-1a over the ordered storm ids of each split; names the provenance of
// graphs and scalers.
std::string split_manifest_hash(const std::vector<std::string>& train_ids,
                                const std::vector<std::string>& val_ids,
                                const std::vector<std::string>& test_ids);

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace stormcast
