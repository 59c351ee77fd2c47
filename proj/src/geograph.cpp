#include "stormcast/geograph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

namespace stormcast {

namespace {

std::int32_t quantize_axis(double v) {
    // The guard keeps decimal inputs like 15.05 (binary 15.049999...) on the
    // upper cell, matching round-half-away-from-zero on the written value.
    double scaled = std::abs(v) * 10.0;
    auto m = static_cast<std::int32_t>(std::floor(scaled + 0.5 + 1e-9));
    return v < 0 ? -m : m;
}

}  // namespace

NodeKey quantize(double lat, double lon) {
    return NodeKey{quantize_axis(lat), quantize_axis(lon)};
}

void SpatialGraph::ensure_node(NodeKey key) {
    auto [it, inserted] = nodes_.try_emplace(key, std::array<double, 2>{key.lat(), key.lon()});
    if (inserted) {
        auto bucket = std::make_pair(
            static_cast<std::int32_t>(std::floor(key.lat())),
            static_cast<std::int32_t>(std::floor(key.lon())));
        index_[bucket].push_back(key);
    }
}

void SpatialGraph::add_edge(NodeKey src, NodeKey dst, double w) {
    ensure_node(src);
    ensure_node(dst);
    double& total = edges_[{src, dst}];
    total += w;
    double undirected = std::max(total, weight(dst, src));
    adjacency_[src][dst] = undirected;
    adjacency_[dst][src] = undirected;
}

void SpatialGraph::add_trajectory(const Trajectory& traj) {
    static constexpr std::pair<int, double> kLagWeights[] = {
        {1, 1.0}, {2, 0.5}, {3, 0.5}, {4, 0.1}, {5, 0.1}};

    std::vector<NodeKey> keys;
    keys.reserve(traj.size());
    for (const auto& obs : traj.observations) keys.push_back(quantize(obs.lat, obs.lon));

    for (std::size_t t = 1; t < keys.size(); ++t) {
        for (auto [lag, w] : kLagWeights) {
            if (static_cast<std::size_t>(lag) > t) break;
            add_edge(keys[t - static_cast<std::size_t>(lag)], keys[t], w);
        }
    }
}

double SpatialGraph::weight(NodeKey src, NodeKey dst) const {
    auto it = edges_.find({src, dst});
    return it == edges_.end() ? 0.0 : it->second;
}

double SpatialGraph::total_weight() const {
    double sum = 0.0;
    for (const auto& [key, w] : edges_) sum += w;
    return sum;
}

Subgraph SpatialGraph::ego_sample(NodeKey ego, int k_hops, std::size_t cap) const {
    if (!has_node(ego)) throw std::invalid_argument("ego node not present in graph");
    if (k_hops < 1 || cap < 1) throw std::invalid_argument("ego_sample needs k >= 1, cap >= 1");

    Subgraph sub;
    std::map<NodeKey, int> index;
    auto retain = [&](NodeKey key) {
        index[key] = static_cast<int>(sub.node_list.size());
        sub.node_list.push_back(key);
        sub.node_coords.push_back(nodes_.at(key));
    };
    retain(ego);
    sub.ego_index = 0;

    std::vector<NodeKey> frontier = {ego};
    for (int hop = 0; hop < k_hops && !frontier.empty(); ++hop) {
        // score = strongest directed weight on any edge linking the candidate
        // to the current frontier
        std::map<NodeKey, double> candidates;
        for (NodeKey u : frontier) {
            auto adj = adjacency_.find(u);
            if (adj == adjacency_.end()) continue;
            for (const auto& [v, w] : adj->second) {
                if (index.count(v)) continue;
                auto [it, inserted] = candidates.try_emplace(v, w);
                if (!inserted && w > it->second) it->second = w;
            }
        }
        std::vector<std::pair<NodeKey, double>> ranked(candidates.begin(), candidates.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (ranked.size() > cap) ranked.resize(cap);

        frontier.clear();
        for (const auto& [key, score] : ranked) {
            retain(key);
            frontier.push_back(key);
        }
    }

    // induced directed edges among retained nodes; edges_ is ordered by
    // source key, so each node's out-edges form a contiguous range
    static constexpr NodeKey kMinKey{INT32_MIN, INT32_MIN};
    for (const auto& [key, idx] : index) {
        for (auto it = edges_.lower_bound({key, kMinKey});
             it != edges_.end() && it->first.first == key; ++it) {
            auto jt = index.find(it->first.second);
            if (jt != index.end()) sub.edge_list.push_back({idx, jt->second, it->second});
        }
    }
    std::sort(sub.edge_list.begin(), sub.edge_list.end(), [](const auto& a, const auto& b) {
        return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
    });
    return sub;
}

std::optional<NodeKey> SpatialGraph::nearest_node(double lat, double lon, double max_dist) const {
    if (nodes_.empty()) return std::nullopt;
    auto blat = static_cast<std::int32_t>(std::floor(lat));
    auto blon = static_cast<std::int32_t>(std::floor(lon));

    bool found = false;
    double best_d2 = 0.0;
    NodeKey best{};
    int reach = static_cast<int>(std::ceil(max_dist));
    for (std::int32_t dlat = -reach; dlat <= reach; ++dlat) {
        for (std::int32_t dlon = -reach; dlon <= reach; ++dlon) {
            auto bucket = index_.find({blat + dlat, blon + dlon});
            if (bucket == index_.end()) continue;
            for (NodeKey key : bucket->second) {
                double da = key.lat() - lat;
                double db = key.lon() - lon;
                double d2 = da * da + db * db;
                if (!found || d2 < best_d2 || (d2 == best_d2 && key < best)) {
                    found = true;
                    best_d2 = d2;
                    best = key;
                }
            }
        }
    }
    if (!found || best_d2 > max_dist * max_dist) return std::nullopt;
    return best;
}

std::string SpatialGraph::to_json(const std::string& built_from_hash) const {
    nlohmann::json j;
    j["built_from"] = built_from_hash;
    auto& jnodes = j["nodes"] = nlohmann::json::array();
    std::map<NodeKey, int> index;
    for (const auto& [key, coords] : nodes_) {
        index[key] = static_cast<int>(jnodes.size());
        jnodes.push_back({key.qlat, key.qlon});
    }
    auto& jedges = j["edges"] = nlohmann::json::array();
    for (const auto& [pair, w] : edges_)
        jedges.push_back({index.at(pair.first), index.at(pair.second), w});
    return j.dump();
}

SpatialGraph SpatialGraph::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    SpatialGraph g;
    std::vector<NodeKey> keys;
    for (const auto& jn : j.at("nodes")) {
        NodeKey key{jn.at(0).get<std::int32_t>(), jn.at(1).get<std::int32_t>()};
        keys.push_back(key);
        g.ensure_node(key);
    }
    for (const auto& je : j.at("edges")) {
        NodeKey src = keys.at(je.at(0).get<std::size_t>());
        NodeKey dst = keys.at(je.at(1).get<std::size_t>());
        g.add_edge(src, dst, je.at(2).get<double>());
    }
    return g;
}

std::uint64_t SpatialGraph::content_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [key, coords] : nodes_) {
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(key.qlat)));
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(key.qlon)));
    }
    for (const auto& [pair, w] : edges_) {
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(pair.first.qlat)));
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(pair.first.qlon)));
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(pair.second.qlat)));
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(pair.second.qlon)));
        std::uint64_t bits;
        static_assert(sizeof bits == sizeof w);
        std::memcpy(&bits, &w, sizeof bits);
        mix(bits);
    }
    return h;
}

SpatialGraph build_graph(const std::vector<Trajectory>& train_trajectories) {
    SpatialGraph g;
    for (const auto& traj : train_trajectories) g.add_trajectory(traj);
    return g;
}

}  // namespace stormcast
