#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stormcast/corpus.hpp"

namespace stormcast {

// A 0.1-degree cell, stored as tenths of a degree.
struct NodeKey {
    std::int32_t qlat = 0;
    std::int32_t qlon = 0;

    auto operator<=>(const NodeKey&) const = default;

    double lat() const { return qlat / 10.0; }  // cell center
    double lon() const { return qlon / 10.0; }
};

// Round-half-away-from-zero to one decimal. A small guard absorbs binary
// representation error so values written as x.x5 land on the upper cell.
NodeKey quantize(double lat, double lon);

struct Subgraph {
    std::vector<NodeKey> node_list;  // ego at node_list[ego_index]
    std::vector<std::array<double, 2>> node_coords;  // global degrees; featurize localizes
    struct Edge {
        int src = 0;
        int dst = 0;
        double weight = 0.0;
    };
    std::vector<Edge> edge_list;
    int ego_index = 0;
};

class SpatialGraph {
public:
    void add_trajectory(const Trajectory& traj);

    bool has_node(NodeKey key) const { return nodes_.count(key) > 0; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    double weight(NodeKey src, NodeKey dst) const;
    double total_weight() const;

    const std::map<NodeKey, std::array<double, 2>>& nodes() const { return nodes_; }
    const std::map<std::pair<NodeKey, NodeKey>, double>& edges() const { return edges_; }

    // Undirected k-hop ball around ego. When a hop uncovers more than cap new
    // nodes, the cap highest-weight ones are kept (ties by NodeKey order).
    Subgraph ego_sample(NodeKey ego, int k_hops, std::size_t cap) const;

    // Closest node by plain Euclidean distance in degree space, or nothing if
    // the closest one is farther than max_dist. Ties broken by NodeKey order.
    std::optional<NodeKey> nearest_node(double lat, double lon, double max_dist = 0.75) const;

    std::string to_json(const std::string& built_from_hash) const;
    static SpatialGraph from_json(const std::string& text);
    std::uint64_t content_hash() const;

private:
    void add_edge(NodeKey src, NodeKey dst, double w);
    void ensure_node(NodeKey key);

    std::map<NodeKey, std::array<double, 2>> nodes_;
    std::map<std::pair<NodeKey, NodeKey>, double> edges_;
    // 1-degree buckets over node cells for radius queries
    std::map<std::pair<std::int32_t, std::int32_t>, std::vector<NodeKey>> index_;
    // undirected adjacency with max directed weight per neighbor
    std::map<NodeKey, std::map<NodeKey, double>> adjacency_;
};

// Accumulates the lag-weighted transition edges of every trajectory:
// 1.0 for the previous step, 0.5 for lags 2-3, 0.1 for lags 4-5.
SpatialGraph build_graph(const std::vector<Trajectory>& train_trajectories);

}  // namespace stormcast
