#include "stormcast/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace stormcast {

const char* variant_name(Variant v) {
    return v == Variant::graph_transformer ? "graph_transformer" : "vanilla_transformer";
}

Variant variant_from_name(const std::string& name) {
    if (name == "graph_transformer" || name == "graph") return Variant::graph_transformer;
    if (name == "vanilla_transformer" || name == "vanilla") return Variant::vanilla_transformer;
    throw std::invalid_argument("unknown variant '" + name + "'");
}

void ModelConfig::validate() const {
    if (d_model % n_heads != 0)
        throw std::invalid_argument("d_model must be divisible by n_heads");
    if (gcn_dim < 1 || d_model < 1 || n_heads < 1 || n_layers < 1 || max_seq < 1)
        throw std::invalid_argument("model dimensions must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
}

ModelConfig ModelConfig::tiny(Variant v) {
    ModelConfig c;
    c.gcn_dim = 4;
    c.d_model = 8;
    c.n_heads = 1;
    c.n_layers = 1;
    c.dropout = 0.0;
    c.variant = v;
    return c;
}

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    double bound = std::sqrt(6.0 / (rows + cols));
    for (double& v : t.data) v = rng_uniform(rng, -bound, bound);
    return t;
}

}  // namespace

Parameters init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Parameters p;

    if (config.variant == Variant::graph_transformer) {
        p["gcn.w1"] = xavier(config.node_feature_dim, config.gcn_dim, rng);
        p["gcn.w2"] = xavier(config.gcn_dim, config.gcn_dim, rng);
    }
    p["proj.w"] = xavier(config.token_dim(), config.d_model, rng);
    p["proj.b"] = Tensor::zeros({config.d_model});

    for (int l = 0; l < config.n_layers; ++l) {
        std::string prefix = "layers." + std::to_string(l) + ".";
        p[prefix + "ln1.g"] = Tensor::full({config.d_model}, 1.0);
        p[prefix + "ln1.b"] = Tensor::zeros({config.d_model});
        for (const char* name : {"wq", "wk", "wv", "wo"})
            p[prefix + "attn." + name] = xavier(config.d_model, config.d_model, rng);
        for (const char* name : {"bq", "bk", "bv", "bo"})
            p[prefix + "attn." + name] = Tensor::zeros({config.d_model});
        p[prefix + "ln2.g"] = Tensor::full({config.d_model}, 1.0);
        p[prefix + "ln2.b"] = Tensor::zeros({config.d_model});
        p[prefix + "ffn.w1"] = xavier(config.d_model, config.ffn_dim(), rng);
        p[prefix + "ffn.b1"] = Tensor::zeros({config.ffn_dim()});
        p[prefix + "ffn.w2"] = xavier(config.ffn_dim(), config.d_model, rng);
        p[prefix + "ffn.b2"] = Tensor::zeros({config.d_model});
    }
    p["head.w"] = xavier(config.d_model, 2, rng);
    p["head.b"] = Tensor::zeros({2});
    return p;
}

Tensor normalize_adjacency(const Subgraph& subgraph) {
    int n = static_cast<int>(subgraph.node_list.size());
    if (n < 1) throw std::invalid_argument("normalize_adjacency: empty subgraph");

    Tensor m = Tensor::zeros({n, n});
    auto at = [&](int i, int j) -> double& {
        return m.data[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)];
    };
    for (const auto& e : subgraph.edge_list) {
        at(e.src, e.dst) += e.weight / 2.0;
        at(e.dst, e.src) += e.weight / 2.0;
    }
    for (int i = 0; i < n; ++i) at(i, i) += 1.0;

    std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double deg = 0.0;
        for (int j = 0; j < n; ++j) deg += at(i, j);
        inv_sqrt_deg[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            at(i, j) *= inv_sqrt_deg[static_cast<std::size_t>(i)] *
                        inv_sqrt_deg[static_cast<std::size_t>(j)];
    return m;
}

std::map<std::string, Var> lease_params(Tape& tape, const Parameters& params, bool requires_grad) {
    std::map<std::string, Var> vars;
    for (const auto& [name, tensor] : params) vars[name] = tape.leaf(tensor, requires_grad);
    return vars;
}

Var gcn_encode(Tape& tape, const Subgraph& subgraph, Var w1, Var w2) {
    int n = static_cast<int>(subgraph.node_list.size());
    Tensor features = Tensor::zeros({n, 2});
    for (int i = 0; i < n; ++i) {
        features.data[static_cast<std::size_t>(i) * 2] =
            subgraph.node_coords[static_cast<std::size_t>(i)][0];
        features.data[static_cast<std::size_t>(i) * 2 + 1] =
            subgraph.node_coords[static_cast<std::size_t>(i)][1];
    }
    Var adj = tape.constant(normalize_adjacency(subgraph));
    Var x = tape.constant(std::move(features));

    Var h1 = relu(matmul(matmul(adj, x), w1));
    Var h2 = matmul(matmul(adj, h1), w2);
    return take_row(h2, subgraph.ego_index);
}

Tensor sinusoidal_encoding(int length, int d_model) {
    Tensor pe = Tensor::zeros({length, d_model});
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < d_model; ++i) {
            double expo = static_cast<double>(2 * (i / 2)) / d_model;
            double angle = pos / std::pow(10000.0, expo);
            pe.data[static_cast<std::size_t>(pos) * d_model + static_cast<std::size_t>(i)] =
                (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

namespace {

Var dropout(Tape& tape, Var x, double rate, const ForwardOptions& options) {
    if (!options.training || rate <= 0.0) return x;
    if (options.dropout_rng == nullptr)
        throw std::invalid_argument("training forward pass needs a dropout rng");
    Tensor mask = Tensor::zeros(x.value().shape);
    double keep = 1.0 - rate;
    for (double& v : mask.data) v = rng_unit(*options.dropout_rng) < keep ? 1.0 / keep : 0.0;
    return mul(x, tape.constant(std::move(mask)));
}

// 1 where the key position is padding, per (batch, query, key)
Tensor key_pad_mask(const std::vector<int>& seq_lens, int padded_len) {
    int batch = static_cast<int>(seq_lens.size());
    Tensor mask = Tensor::zeros({batch, padded_len, padded_len});
    for (int b = 0; b < batch; ++b) {
        for (int q = 0; q < padded_len; ++q)
            for (int k = seq_lens[static_cast<std::size_t>(b)]; k < padded_len; ++k)
                mask.data[(static_cast<std::size_t>(b) * padded_len + static_cast<std::size_t>(q)) *
                              padded_len +
                          static_cast<std::size_t>(k)] = 1.0;
    }
    return mask;
}

}  // namespace

Var transformer_encode(Tape& tape, Var tokens, const std::vector<int>& seq_lens, int padded_len,
                       const std::map<std::string, Var>& params, const ModelConfig& config,
                       const ForwardOptions& options) {
    int batch = static_cast<int>(seq_lens.size());
    for (int len : seq_lens)
        if (len < 1 || len > padded_len)
            throw std::invalid_argument("transformer_encode: sequence length " +
                                        std::to_string(len) + " outside [1, padded_len]");
    if (tokens.value().dim(0) != batch * padded_len || tokens.value().dim(1) != config.d_model)
        throw ShapeError("transformer_encode: tokens must be (batch*padded_len, d_model)");

    const int hd = config.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor mask = key_pad_mask(seq_lens, padded_len);

    Var x = tokens;
    for (int l = 0; l < config.n_layers; ++l) {
        std::string prefix = "layers." + std::to_string(l) + ".";
        auto P = [&](const std::string& name) { return params.at(prefix + name); };

        Var h = layer_norm(x, P("ln1.g"), P("ln1.b"));
        Var q = linear(h, P("attn.wq"), P("attn.bq"));
        Var k = linear(h, P("attn.wk"), P("attn.bk"));
        Var v = linear(h, P("attn.wv"), P("attn.bv"));

        std::vector<Var> head_outputs;
        for (int head = 0; head < config.n_heads; ++head) {
            int off = head * hd;
            Var qh = reshape(narrow_last(q, off, hd), {batch, padded_len, hd});
            Var kh = reshape(narrow_last(k, off, hd), {batch, padded_len, hd});
            Var vh = reshape(narrow_last(v, off, hd), {batch, padded_len, hd});

            Var scores = scale(matmul(qh, transpose_last2(kh)), inv_sqrt_hd);
            scores = masked_fill(scores, mask, -1e30);
            Var attn = softmax_lastdim(scores);
            attn = dropout(tape, attn, config.dropout, options);
            Var ctx = matmul(attn, vh);
            head_outputs.push_back(reshape(ctx, {batch * padded_len, hd}));
        }
        Var merged = concat_last(head_outputs);
        Var attn_out = linear(merged, P("attn.wo"), P("attn.bo"));
        x = add(x, attn_out);

        Var h2 = layer_norm(x, P("ln2.g"), P("ln2.b"));
        Var f = relu(linear(h2, P("ffn.w1"), P("ffn.b1")));
        f = dropout(tape, f, config.dropout, options);
        Var f2 = linear(f, P("ffn.w2"), P("ffn.b2"));
        x = add(x, f2);
    }
    return x;
}

Var forward(Tape& tape, const std::vector<const ModelInput*>& batch,
            const std::map<std::string, Var>& params, const ModelConfig& config,
            const ForwardOptions& options) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");

    int padded_len = 0;
    std::vector<int> seq_lens;
    for (const ModelInput* input : batch) {
        int len = input->seq_len();
        if (len < 1) throw std::invalid_argument("forward: input with no steps");
        if (len > config.max_seq)
            throw std::invalid_argument("forward: sequence longer than max_seq");
        seq_lens.push_back(len);
        padded_len = std::max(padded_len, len);
    }

    const bool graph_variant = config.variant == Variant::graph_transformer;
    Var w1, w2;
    if (graph_variant) {
        w1 = params.at("gcn.w1");
        w2 = params.at("gcn.w2");
    }

    std::vector<Var> token_rows;
    token_rows.reserve(static_cast<std::size_t>(batch.size()) * padded_len);
    const int tok_dim = config.token_dim();
    for (const ModelInput* input : batch) {
        for (int s = 0; s < padded_len; ++s) {
            if (s >= input->seq_len()) {
                token_rows.push_back(tape.constant(Tensor::zeros({1, tok_dim})));
                continue;
            }
            const StepInput& step = input->steps[static_cast<std::size_t>(s)];
            if (graph_variant) {
                Var ego = reshape(gcn_encode(tape, step.subgraph, w1, w2), {1, config.gcn_dim});
                Tensor weather({1, config.weather_dim},
                               {step.weather_std.begin(), step.weather_std.end()});
                token_rows.push_back(concat_last({ego, tape.constant(std::move(weather))}));
            } else {
                Tensor row = Tensor::zeros({1, tok_dim});
                row.data[0] = step.position_local[0];
                row.data[1] = step.position_local[1];
                std::copy(step.weather_std.begin(), step.weather_std.end(), row.data.begin() + 2);
                token_rows.push_back(tape.constant(std::move(row)));
            }
        }
    }

    Var tokens = concat_rows(token_rows);
    Var x = linear(tokens, params.at("proj.w"), params.at("proj.b"));

    if (config.positional_encoding) {
        Tensor pe = sinusoidal_encoding(padded_len, config.d_model);
        Tensor tiled = Tensor::zeros({static_cast<int>(batch.size()) * padded_len, config.d_model});
        for (std::size_t b = 0; b < batch.size(); ++b)
            std::copy(pe.data.begin(), pe.data.end(),
                      tiled.data.begin() +
                          static_cast<std::ptrdiff_t>(b * pe.data.size()));
        x = add(x, tape.constant(std::move(tiled)));
    }

    x = transformer_encode(tape, x, seq_lens, padded_len, params, config, options);

    std::vector<int> final_rows;
    for (std::size_t b = 0; b < batch.size(); ++b)
        final_rows.push_back(static_cast<int>(b) * padded_len + seq_lens[b] - 1);
    Var final_tokens = take_rows(x, final_rows);
    return linear(final_tokens, params.at("head.w"), params.at("head.b"));
}

std::vector<std::array<double, 2>> predict_batch(const Parameters& params,
                                                 const std::vector<const ModelInput*>& batch,
                                                 const ModelConfig& config) {
    Tape tape;
    auto vars = lease_params(tape, params, false);
    Var pred = forward(tape, batch, vars, config, ForwardOptions{});
    std::vector<std::array<double, 2>> out;
    out.reserve(batch.size());
    const Tensor& p = pred.value();
    for (std::size_t b = 0; b < batch.size(); ++b)
        out.push_back({p.data[b * 2], p.data[b * 2 + 1]});
    return out;
}

}  // namespace stormcast
