#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stormcast/autodiff.hpp"
#include "stormcast/featurize.hpp"
#include "stormcast/rng.hpp"

namespace stormcast {

enum class Variant { graph_transformer, vanilla_transformer };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
    int gcn_dim = 16;
    int node_feature_dim = 2;
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 4;
    int weather_dim = kWeatherDim;
    int max_seq = kMaxInputSteps;
    double dropout = 0.1;
    bool positional_encoding = true;
    Variant variant = Variant::graph_transformer;

    // per-token input width before projection to d_model
    int token_dim() const {
        return (variant == Variant::graph_transformer ? gcn_dim : node_feature_dim) + weather_dim;
    }
    int head_dim() const { return d_model / n_heads; }
    int ffn_dim() const { return 4 * d_model; }
    void validate() const;

    static ModelConfig tiny(Variant v = Variant::graph_transformer);
};

using Parameters = std::map<std::string, Tensor>;

// Xavier-uniform weights, zero biases, unit layer-norm gains; draw order is
// fixed so a seed pins every tensor bitwise.
Parameters init_params(const ModelConfig& config, std::uint64_t seed);

// Kipf-Welling normalization on the symmetrized weighted adjacency:
// D^{-1/2} (sym(A) + I) D^{-1/2}.
Tensor normalize_adjacency(const Subgraph& subgraph);

struct ForwardOptions {
    bool training = false;
    Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

// Vars for every parameter, leased onto the tape in map order.
std::map<std::string, Var> lease_params(Tape& tape, const Parameters& params, bool requires_grad);

// Two-layer GCN over the subgraph; returns the ego row of the second layer
// (no activation after it).
Var gcn_encode(Tape& tape, const Subgraph& subgraph, Var w1, Var w2);

// Pre-norm encoder stack over right-padded token rows laid out (B*S, d_model).
// Padded key positions are masked out of every attention row.
Var transformer_encode(Tape& tape, Var tokens, const std::vector<int>& seq_lens, int padded_len,
                       const std::map<std::string, Var>& params, const ModelConfig& config,
                       const ForwardOptions& options);

// Full model: per-step tokens (GCN ego embedding or local position, plus
// standardized weather), projection, positional encoding, encoder, final real
// token, linear head. Returns (B, 2) local-frame predictions.
Var forward(Tape& tape, const std::vector<const ModelInput*>& batch,
            const std::map<std::string, Var>& params, const ModelConfig& config,
            const ForwardOptions& options);

// Inference convenience: runs forward on a private tape without gradients.
std::vector<std::array<double, 2>> predict_batch(const Parameters& params,
                                                 const std::vector<const ModelInput*>& batch,
                                                 const ModelConfig& config);

Tensor sinusoidal_encoding(int length, int d_model);

}  // namespace stormcast
