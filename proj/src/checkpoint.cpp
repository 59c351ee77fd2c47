#include "stormcast/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stormcast {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be >= 1");
    if (pairs_per_trajectory < 1)
        throw std::invalid_argument("pairs_per_trajectory must be >= 1");
    if (k_hops < 1 || neighbor_cap < 1)
        throw std::invalid_argument("k_hops and neighbor_cap must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be >= 0");
}

std::string TrainHistory::to_jsonl() const {
    std::ostringstream out;
    for (const auto& e : epochs) {
        json j = {{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_loss", e.val_loss},
                  {"wall_time_sec", e.wall_time_sec}};
        out << j.dump() << "\n";
    }
    return out.str();
}

namespace {

const char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned int chunk = static_cast<unsigned int>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<unsigned int>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= static_cast<unsigned int>(data[i + 2]);
        out.push_back(kB64Chars[(chunk >> 18) & 0x3F]);
        out.push_back(kB64Chars[(chunk >> 12) & 0x3F]);
        out.push_back(i + 1 < len ? kB64Chars[(chunk >> 6) & 0x3F] : '=');
        out.push_back(i + 2 < len ? kB64Chars[chunk & 0x3F] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw std::invalid_argument("invalid base64 character");
    };
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i + 3 < text.size(); i += 4) {
        int v0 = value_of(text[i]), v1 = value_of(text[i + 1]);
        int v2 = value_of(text[i + 2]), v3 = value_of(text[i + 3]);
        if (v0 < 0 || v1 < 0) throw std::invalid_argument("truncated base64 block");
        unsigned int chunk = (static_cast<unsigned int>(v0) << 18) |
                             (static_cast<unsigned int>(v1) << 12);
        out.push_back(static_cast<unsigned char>((chunk >> 16) & 0xFF));
        if (v2 >= 0) {
            chunk |= static_cast<unsigned int>(v2) << 6;
            out.push_back(static_cast<unsigned char>((chunk >> 8) & 0xFF));
        }
        if (v3 >= 0) {
            chunk |= static_cast<unsigned int>(v3);
            out.push_back(static_cast<unsigned char>(chunk & 0xFF));
        }
    }
    return out;
}

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape;
    j["b64"] = base64_encode(reinterpret_cast<const unsigned char*>(t.data.data()),
                             t.data.size() * sizeof(double));
    return j;
}

Tensor tensor_from_json(const json& j) {
    std::vector<int> shape = j.at("shape").get<std::vector<int>>();
    auto bytes = base64_decode(j.at("b64").get<std::string>());
    if (bytes.size() % sizeof(double) != 0)
        throw std::invalid_argument("tensor payload is not a whole number of doubles");
    std::vector<double> data(bytes.size() / sizeof(double));
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Tensor(std::move(shape), std::move(data));
}

json params_to_json(const Parameters& params) {
    json j = json::object();
    for (const auto& [name, t] : params) j[name] = tensor_to_json(t);
    return j;
}

Parameters params_from_json(const json& j) {
    Parameters p;
    for (auto it = j.begin(); it != j.end(); ++it) p[it.key()] = tensor_from_json(it.value());
    return p;
}

json model_config_json(const ModelConfig& c) {
    return {{"gcn_dim", c.gcn_dim},
            {"node_feature_dim", c.node_feature_dim},
            {"d_model", c.d_model},
            {"n_heads", c.n_heads},
            {"n_layers", c.n_layers},
            {"weather_dim", c.weather_dim},
            {"max_seq", c.max_seq},
            {"dropout", c.dropout},
            {"positional_encoding", c.positional_encoding},
            {"variant", variant_name(c.variant)}};
}

ModelConfig model_config_from(const json& j) {
    ModelConfig c;
    c.gcn_dim = j.at("gcn_dim").get<int>();
    c.node_feature_dim = j.at("node_feature_dim").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.weather_dim = j.at("weather_dim").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.positional_encoding = j.at("positional_encoding").get<bool>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    return c;
}

json train_config_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"early_stop_patience", c.early_stop_patience},
            {"early_stop_min_delta", c.early_stop_min_delta},
            {"seed", c.seed},
            {"pairs_per_trajectory", c.pairs_per_trajectory},
            {"k_hops", c.k_hops},
            {"neighbor_cap", c.neighbor_cap},
            {"grad_clip", c.grad_clip},
            {"scaler_global", c.scaler_global}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
    c.early_stop_min_delta = j.at("early_stop_min_delta").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.pairs_per_trajectory = j.at("pairs_per_trajectory").get<int>();
    c.k_hops = j.at("k_hops").get<int>();
    c.neighbor_cap = j.at("neighbor_cap").get<int>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.scaler_global = j.at("scaler_global").get<bool>();
    return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) {
    return model_config_json(config).dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    return model_config_from(json::parse(text));
}

std::string Checkpoint::to_json() const {
    json j;
    j["format"] = "stormcast-checkpoint-v1";
    j["model_config"] = model_config_json(model);
    j["train_config"] = train_config_json(train);
    j["seed"] = train.seed;
    j["params"] = params_to_json(params);
    j["adam"] = {{"t", adam.t},
                 {"hyper",
                  {{"lr", adam.hyper.lr},
                   {"beta1", adam.hyper.beta1},
                   {"beta2", adam.hyper.beta2},
                   {"eps", adam.hyper.eps}}},
                 {"m", params_to_json(adam.m)},
                 {"v", params_to_json(adam.v)}};
    j["scaler"] = {{"mean", scaler.mean}, {"std", scaler.std}, {"fitted_on", scaler.fitted_on}};
    j["graph"] = json::parse(graph.to_json(graph_hash));
    j["graph_hash"] = graph_hash;

    json epochs = json::array();
    for (const auto& e : history.epochs)
        epochs.push_back(
            {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    j["history"] = {{"epochs", epochs},
                    {"best_epoch", history.best_epoch},
                    {"stop_reason", history.stop_reason}};
    return j.dump();
}

Checkpoint Checkpoint::from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.at("format").get<std::string>() != "stormcast-checkpoint-v1")
        throw std::invalid_argument("unrecognized checkpoint format");
    Checkpoint c;
    c.model = model_config_from(j.at("model_config"));
    c.train = train_config_from(j.at("train_config"));
    c.params = params_from_json(j.at("params"));
    const auto& ja = j.at("adam");
    c.adam.t = ja.at("t").get<long>();
    c.adam.hyper.lr = ja.at("hyper").at("lr").get<double>();
    c.adam.hyper.beta1 = ja.at("hyper").at("beta1").get<double>();
    c.adam.hyper.beta2 = ja.at("hyper").at("beta2").get<double>();
    c.adam.hyper.eps = ja.at("hyper").at("eps").get<double>();
    c.adam.m = params_from_json(ja.at("m"));
    c.adam.v = params_from_json(ja.at("v"));
    const auto& js = j.at("scaler");
    for (int f = 0; f < kWeatherDim; ++f) {
        c.scaler.mean[static_cast<std::size_t>(f)] = js.at("mean").at(f).get<double>();
        c.scaler.std[static_cast<std::size_t>(f)] = js.at("std").at(f).get<double>();
    }
    c.scaler.fitted_on = js.at("fitted_on").get<std::string>();
    c.graph = SpatialGraph::from_json(j.at("graph").dump());
    c.graph_hash = j.at("graph_hash").get<std::string>();
    const auto& jh = j.at("history");
    for (const auto& je : jh.at("epochs")) {
        EpochRecord e;
        e.epoch = je.at("epoch").get<int>();
        e.train_loss = je.at("train_loss").get<double>();
        e.val_loss = je.at("val_loss").get<double>();
        c.history.epochs.push_back(e);
    }
    c.history.best_epoch = jh.at("best_epoch").get<int>();
    c.history.stop_reason = jh.at("stop_reason").get<std::string>();
    return c;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << to_json();
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

std::string split_manifest_hash(const std::vector<std::string>& train_ids,
                                const std::vector<std::string>& val_ids,
                                const std::vector<std::string>& test_ids) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x1F;
        h *= 1099511628211ULL;
    };
    mix("train");
    for (const auto& id : train_ids) mix(id);
    mix("val");
    for (const auto& id : val_ids) mix(id);
    mix("test");
    for (const auto& id : test_ids) mix(id);

    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace stormcast
