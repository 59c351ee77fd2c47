#pragma once

#include <array>
#include <string>
#include <vector>

#include "stormcast/corpus.hpp"
#include "stormcast/geograph.hpp"

namespace stormcast {

struct Scaler {
    std::array<double, kWeatherDim> mean{};
    std::array<double, kWeatherDim> std{};
    std::string fitted_on;  // split manifest hash

    // Missing entries standardize to 0, i.e. they are imputed at the mean.
    std::array<double, kWeatherDim> transform(const std::array<double, kWeatherDim>& values,
                                              const std::array<bool, kWeatherDim>& missing) const;
};

// Per-feature mean and population std over the non-missing entries of every
// input step. Features with no data or zero variance get mean 0 / std 1.
Scaler fit_scaler(const std::vector<ExamplePair>& train_pairs);

std::vector<std::array<double, 2>> to_local_frame(
    const std::vector<std::array<double, 2>>& points, double origin_lat, double origin_lon);
std::array<double, 2> to_local_frame(double lat, double lon, double origin_lat, double origin_lon);
std::array<double, 2> from_local_frame(const std::array<double, 2>& local, double origin_lat,
                                       double origin_lon);

struct StepInput {
    std::array<double, 2> position_local{};
    std::array<double, kWeatherDim> weather_std{};
    Subgraph subgraph;  // node_coords already in the local frame
    bool snapped = false;     // node came from nearest_node rather than exact match
    bool fallback = false;    // no node within range; singleton subgraph
};

struct ModelInput {
    std::vector<StepInput> steps;  // seq_len entries, <= 16
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    std::array<double, 2> target_local{};
    std::array<double, 2> target_global{};
    std::string source_id;

    int seq_len() const { return static_cast<int>(steps.size()); }
};

// Resolve each step's graph node (exact cell, else nearest within 0.75, else
// a singleton stub of the step itself), extract the ego subgraph, and express
// everything in the pair's local frame.
ModelInput assemble(const ExamplePair& pair, const SpatialGraph& graph, const Scaler& scaler,
                    int k_hops, std::size_t neighbor_cap);

// Same resolution path for a bare prefix with no target (prediction input).
ModelInput assemble_prefix(const std::vector<Observation>& prefix, const SpatialGraph& graph,
                           const Scaler& scaler, int k_hops, std::size_t neighbor_cap);

}  // namespace stormcast
