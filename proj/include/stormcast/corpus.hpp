#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "stormcast/rng.hpp"

namespace stormcast {

// Number of numeric weather features carried per observation, in fixed order:
// max_wind, min_pressure, then the 34/50/64-kt wind radii in NE/SE/SW/NW order.
constexpr int kWeatherDim = 14;

extern const std::array<const char*, kWeatherDim> kWeatherNames;

struct Timestamp {
    std::int32_t yyyymmdd = 0;
    std::int32_t hhmm = 0;

    auto operator<=>(const Timestamp&) const = default;
};

struct Observation {
    Timestamp time;
    double lat = 0.0;  // degrees north, signed
    double lon = 0.0;  // degrees east, signed (west negative)
    std::array<double, kWeatherDim> weather{};
    std::array<bool, kWeatherDim> missing{};  // true = value absent, never consume weather[i]

    double max_wind() const { return weather[0]; }
    double min_pressure() const { return weather[1]; }
};

struct Trajectory {
    std::string storm_id;
    std::string name;
    std::vector<Observation> observations;

    std::size_t size() const { return observations.size(); }
};

// One model input/output pair: up to 16 input steps plus the observation that
// immediately follows them.
struct ExamplePair {
    std::vector<Observation> input_steps;  // 1..16 steps
    Observation target;
    double origin_lat = 0.0;  // first input step
    double origin_lon = 0.0;
    std::string source_id;  // storm_id + ":" + target index
};

constexpr int kMaxInputSteps = 16;

struct SplitSet {
    std::vector<Trajectory> train;
    std::vector<Trajectory> val;
    std::vector<Trajectory> test;
    std::uint64_t seed = 0;
    std::vector<double> strata_boundaries;  // length quantile cut points
    std::vector<std::string> warnings;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct ParseResult {
    std::vector<Trajectory> trajectories;
    std::size_t dropped_short = 0;  // headers whose trajectory had < 2 rows
};

// HURDAT2 best-track text: header "ID, NAME, ROWCOUNT," followed by ROWCOUNT
// observation rows. Sentinels -999 (-99 for wind) become missing flags.
ParseResult parse_hurdat2(std::istream& in);
ParseResult parse_hurdat2_file(const std::string& path);

// Inverse of parse_hurdat2 for every retained field; also the emission format
// for synthetic corpora.
void serialize_hurdat2(const std::vector<Trajectory>& trajectories, std::ostream& out);
std::string serialize_hurdat2(const std::vector<Trajectory>& trajectories);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

// Trajectory indices grouped by length quartile. Groups smaller than
// min_group are merged into a neighbor (with a warning) so every group can
// be split or folded.
struct Strata {
    std::vector<std::vector<std::size_t>> groups;
    std::vector<double> boundaries;
    std::vector<std::string> warnings;
};

Strata stratify_by_length(const std::vector<Trajectory>& trajectories, std::size_t min_group);

// Stratified by trajectory length (quartile strata; thin strata merged into a
// neighbor). Deterministic under seed.
SplitSet stratified_split(const std::vector<Trajectory>& trajectories, SplitRatios ratios,
                          std::uint64_t seed);

// Manifest JSON: storm ids per split plus seed and strata boundaries.
std::string split_manifest_to_json(const SplitSet& split);
// Rebuilds a SplitSet by looking manifest ids up in the corpus; unknown ids
// are an error.
SplitSet split_from_manifest(const std::vector<Trajectory>& corpus,
                             const std::string& manifest_json);

// Draw up to pairs_per_trajectory (input, target) pairs per trajectory,
// targets uniform without replacement over the valid indices.
std::vector<ExamplePair> sample_pairs(const std::vector<Trajectory>& trajectories,
                                      int pairs_per_trajectory, std::uint64_t seed);

// Reconstructs the pair an ExamplePair claims to be; used by validity checks.
ExamplePair make_pair(const Trajectory& traj, std::size_t target_index);

struct SynthConfig {
    int n_trajectories = 100;
    int latent_graph_nodes = 50;
    double noise_sigma = 0.05;  // degrees, per coordinate
    int min_length = 6;
    int max_length = 20;
    std::uint64_t seed = 0;
};

struct LatentEdge {
    int src = 0;
    int dst = 0;
    double weight = 0.0;
};

struct LatentGraph {
    std::vector<std::array<double, 2>> node_coords;  // (lat, lon), cell-aligned
    std::vector<LatentEdge> edges;

    bool has_edge(int src, int dst) const;
};

struct SyntheticCorpus {
    std::vector<Trajectory> trajectories;
    LatentGraph latent;
    std::vector<std::vector<int>> node_paths;  // latent node index per step, per trajectory
};

// Weighted random walks on a random latent graph over 0.1-degree-aligned
// cells, plus Gaussian positional noise and procedural weather. The latent
// graph is returned so tests can check emitted transitions against it.
SyntheticCorpus generate_synthetic(const SynthConfig& config);

}  // namespace stormcast
