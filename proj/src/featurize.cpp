#include "stormcast/featurize.hpp"

#include <cmath>
#include <stdexcept>

namespace stormcast {

std::array<double, kWeatherDim> Scaler::transform(
    const std::array<double, kWeatherDim>& values,
    const std::array<bool, kWeatherDim>& missing) const {
    std::array<double, kWeatherDim> out{};
    for (int f = 0; f < kWeatherDim; ++f) {
        out[f] = missing[f] ? 0.0 : (values[f] - mean[f]) / std[f];
    }
    return out;
}

Scaler fit_scaler(const std::vector<ExamplePair>& train_pairs) {
    Scaler scaler;
    std::array<double, kWeatherDim> sum{};
    std::array<double, kWeatherDim> sum_sq{};
    std::array<std::size_t, kWeatherDim> count{};

    for (const auto& pair : train_pairs) {
        for (const auto& step : pair.input_steps) {
            for (int f = 0; f < kWeatherDim; ++f) {
                if (step.missing[f]) continue;
                sum[f] += step.weather[f];
                sum_sq[f] += step.weather[f] * step.weather[f];
                ++count[f];
            }
        }
    }
    for (int f = 0; f < kWeatherDim; ++f) {
        if (count[f] == 0) {
            scaler.mean[f] = 0.0;
            scaler.std[f] = 1.0;
            continue;
        }
        double n = static_cast<double>(count[f]);
        scaler.mean[f] = sum[f] / n;
        double var = sum_sq[f] / n - scaler.mean[f] * scaler.mean[f];
        double sd = var > 0.0 ? std::sqrt(var) : 0.0;
        scaler.std[f] = sd < 1e-8 ? 1.0 : sd;
    }
    return scaler;
}

std::array<double, 2> to_local_frame(double lat, double lon, double origin_lat,
                                     double origin_lon) {
    return {lat - origin_lat, lon - origin_lon};
}

std::vector<std::array<double, 2>> to_local_frame(const std::vector<std::array<double, 2>>& points,
                                                  double origin_lat, double origin_lon) {
    std::vector<std::array<double, 2>> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(to_local_frame(p[0], p[1], origin_lat, origin_lon));
    return out;
}

std::array<double, 2> from_local_frame(const std::array<double, 2>& local, double origin_lat,
                                       double origin_lon) {
    return {local[0] + origin_lat, local[1] + origin_lon};
}

namespace {

Subgraph singleton_subgraph(double lat, double lon) {
    Subgraph sub;
    sub.node_list.push_back(quantize(lat, lon));
    sub.node_coords.push_back({lat, lon});
    sub.ego_index = 0;
    return sub;
}

StepInput assemble_step(const Observation& obs, const SpatialGraph& graph, const Scaler& scaler,
                        double origin_lat, double origin_lon, int k_hops,
                        std::size_t neighbor_cap) {
    StepInput step;
    step.position_local = to_local_frame(obs.lat, obs.lon, origin_lat, origin_lon);
    step.weather_std = scaler.transform(obs.weather, obs.missing);

    NodeKey exact = quantize(obs.lat, obs.lon);
    if (graph.has_node(exact)) {
        step.subgraph = graph.ego_sample(exact, k_hops, neighbor_cap);
    } else if (auto snapped = graph.nearest_node(obs.lat, obs.lon)) {
        step.subgraph = graph.ego_sample(*snapped, k_hops, neighbor_cap);
        step.snapped = true;
    } else {
        step.subgraph = singleton_subgraph(obs.lat, obs.lon);
        step.fallback = true;
    }
    for (auto& coords : step.subgraph.node_coords)
        coords = to_local_frame(coords[0], coords[1], origin_lat, origin_lon);
    return step;
}

}  // namespace

ModelInput assemble_prefix(const std::vector<Observation>& prefix, const SpatialGraph& graph,
                           const Scaler& scaler, int k_hops, std::size_t neighbor_cap) {
    if (prefix.empty()) throw std::invalid_argument("empty prefix");
    std::size_t begin =
        prefix.size() > static_cast<std::size_t>(kMaxInputSteps) ? prefix.size() - kMaxInputSteps
                                                                 : 0;
    ModelInput input;
    input.origin_lat = prefix[begin].lat;
    input.origin_lon = prefix[begin].lon;
    for (std::size_t i = begin; i < prefix.size(); ++i) {
        input.steps.push_back(assemble_step(prefix[i], graph, scaler, input.origin_lat,
                                            input.origin_lon, k_hops, neighbor_cap));
    }
    return input;
}

ModelInput assemble(const ExamplePair& pair, const SpatialGraph& graph, const Scaler& scaler,
                    int k_hops, std::size_t neighbor_cap) {
    ModelInput input = assemble_prefix(pair.input_steps, graph, scaler, k_hops, neighbor_cap);
    input.target_global = {pair.target.lat, pair.target.lon};
    input.target_local =
        to_local_frame(pair.target.lat, pair.target.lon, input.origin_lat, input.origin_lon);
    input.source_id = pair.source_id;
    return input;
}

}  // namespace stormcast
