// stormcast: hurricane next-location prediction with a spatial knowledge
// graph + transformer, and a vanilla-transformer baseline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stormcast/checkpoint.hpp"
#include "stormcast/corpus.hpp"
#include "stormcast/evalkit.hpp"
#include "stormcast/geograph.hpp"
#include "stormcast/trainer.hpp"
#include "stormcast/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stormcast;

namespace {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SplitRatios ratios;
    SynthConfig synth;
    int folds = 5;
    double val_fraction = 1.0 / 9.0;
};

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw std::runtime_error("unknown config key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& target) {
    if (obj.contains(key)) target = obj.at(key).get<T>();
}

RunConfig load_config(const std::string& path) {
    RunConfig config;
    if (path.empty()) return config;

    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j = json::parse(in);
    check_keys(j, {"model", "train", "split", "synth", "crossval"}, "config root");

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"gcn_dim", "node_feature_dim", "d_model", "n_heads", "n_layers",
                    "weather_dim", "max_seq", "dropout", "positional_encoding", "variant"},
                   "model");
        maybe(m, "gcn_dim", config.model.gcn_dim);
        maybe(m, "node_feature_dim", config.model.node_feature_dim);
        maybe(m, "d_model", config.model.d_model);
        maybe(m, "n_heads", config.model.n_heads);
        maybe(m, "n_layers", config.model.n_layers);
        maybe(m, "weather_dim", config.model.weather_dim);
        maybe(m, "max_seq", config.model.max_seq);
        maybe(m, "dropout", config.model.dropout);
        maybe(m, "positional_encoding", config.model.positional_encoding);
        if (m.contains("variant"))
            config.model.variant = variant_from_name(m.at("variant").get<std::string>());
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"epochs", "batch_size", "lr", "early_stop_patience", "early_stop_min_delta",
                    "seed", "pairs_per_trajectory", "k_hops", "neighbor_cap", "grad_clip",
                    "scaler_global"},
                   "train");
        maybe(t, "epochs", config.train.epochs);
        maybe(t, "batch_size", config.train.batch_size);
        maybe(t, "lr", config.train.lr);
        maybe(t, "early_stop_patience", config.train.early_stop_patience);
        maybe(t, "early_stop_min_delta", config.train.early_stop_min_delta);
        maybe(t, "seed", config.train.seed);
        maybe(t, "pairs_per_trajectory", config.train.pairs_per_trajectory);
        maybe(t, "k_hops", config.train.k_hops);
        maybe(t, "neighbor_cap", config.train.neighbor_cap);
        maybe(t, "grad_clip", config.train.grad_clip);
        maybe(t, "scaler_global", config.train.scaler_global);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        check_keys(s, {"ratios"}, "split");
        if (s.contains("ratios")) {
            auto r = s.at("ratios").get<std::vector<double>>();
            if (r.size() != 3) throw std::runtime_error("split.ratios needs 3 values");
            config.ratios = {r[0], r[1], r[2]};
        }
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        check_keys(s,
                   {"n_trajectories", "latent_graph_nodes", "noise_sigma", "min_length",
                    "max_length"},
                   "synth");
        maybe(s, "n_trajectories", config.synth.n_trajectories);
        maybe(s, "latent_graph_nodes", config.synth.latent_graph_nodes);
        maybe(s, "noise_sigma", config.synth.noise_sigma);
        maybe(s, "min_length", config.synth.min_length);
        maybe(s, "max_length", config.synth.max_length);
    }
    if (j.contains("crossval")) {
        const json& c = j.at("crossval");
        check_keys(c, {"folds", "val_fraction"}, "crossval");
        maybe(c, "folds", config.folds);
        maybe(c, "val_fraction", config.val_fraction);
    }
    return config;
}

json resolved_config_json(const RunConfig& config, const std::string& command) {
    json j;
    j["command"] = command;
    j["model"] = json::parse(model_config_to_json(config.model));
    j["train"] = {{"epochs", config.train.epochs},
                  {"batch_size", config.train.batch_size},
                  {"lr", config.train.lr},
                  {"early_stop_patience", config.train.early_stop_patience},
                  {"early_stop_min_delta", config.train.early_stop_min_delta},
                  {"seed", config.train.seed},
                  {"pairs_per_trajectory", config.train.pairs_per_trajectory},
                  {"k_hops", config.train.k_hops},
                  {"neighbor_cap", config.train.neighbor_cap},
                  {"grad_clip", config.train.grad_clip},
                  {"scaler_global", config.train.scaler_global}};
    j["split"] = {{"ratios", {config.ratios.train, config.ratios.val, config.ratios.test}}};
    j["synth"] = {{"n_trajectories", config.synth.n_trajectories},
                  {"latent_graph_nodes", config.synth.latent_graph_nodes},
                  {"noise_sigma", config.synth.noise_sigma},
                  {"min_length", config.synth.min_length},
                  {"max_length", config.synth.max_length}};
    j["crossval"] = {{"folds", config.folds}, {"val_fraction", config.val_fraction}};
    return j;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

void emit_run_config(const RunConfig& config, const std::string& command,
                     const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "run_config.json",
               resolved_config_json(config, command).dump(2) + "\n");
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

SplitSet resolve_split(const RunConfig& config, const std::string& corpus_path,
                       const std::string& manifest_path, std::size_t* dropped_out = nullptr) {
    auto parsed = parse_hurdat2_file(corpus_path);
    if (dropped_out) *dropped_out = parsed.dropped_short;
    if (!manifest_path.empty())
        return split_from_manifest(parsed.trajectories, slurp(manifest_path));
    return stratified_split(parsed.trajectories, config.ratios, config.train.seed);
}

std::string manifest_hash_of(const SplitSet& split) {
    auto ids = [](const std::vector<Trajectory>& trajs) {
        std::vector<std::string> out;
        for (const auto& t : trajs) out.push_back(t.storm_id);
        return out;
    };
    return split_manifest_hash(ids(split.train), ids(split.val), ids(split.test));
}

// prefix CSV: timestamp, lat, lon, max_wind, min_pressure, r34NE..r64NW
std::vector<Observation> read_prefix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prefix file: " + path);
    std::vector<Observation> prefix;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string trimmed = line;
        trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
        if (trimmed.empty() || trimmed[0] == '#') continue;
        if (std::isalpha(static_cast<unsigned char>(trimmed[0]))) continue;  // header row

        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cell.erase(0, cell.find_first_not_of(" \t\r"));
            cell.erase(cell.find_last_not_of(" \t\r") + 1);
            fields.push_back(cell);
        }
        if (fields.size() < 3)
            throw std::runtime_error("prefix row " + std::to_string(lineno) +
                                     " needs at least timestamp, lat, lon");
        Observation obs;
        long long stamp = std::stoll(fields[0]);
        obs.time.yyyymmdd = static_cast<std::int32_t>(stamp / 10000);
        obs.time.hhmm = static_cast<std::int32_t>(stamp % 10000);
        obs.lat = std::stod(fields[1]);
        obs.lon = std::stod(fields[2]);
        for (int f = 0; f < kWeatherDim; ++f) {
            std::size_t col = 3 + static_cast<std::size_t>(f);
            if (col >= fields.size() || fields[col].empty()) {
                obs.missing[f] = true;
                continue;
            }
            double v = std::stod(fields[col]);
            if (v == -999.0 || (f == 0 && v == -99.0)) {
                obs.missing[f] = true;
            } else {
                obs.weather[f] = v;
            }
        }
        prefix.push_back(obs);
    }
    if (prefix.empty()) throw std::runtime_error("empty prefix: " + path + " has no data rows");
    return prefix;
}

int cmd_prepare(const RunConfig& config, const std::string& corpus_path,
                const std::string& out_dir) {
    std::size_t dropped = 0;
    SplitSet split = resolve_split(config, corpus_path, "", &dropped);
    emit_run_config(config, "prepare", out_dir);
    write_file(fs::path(out_dir) / "manifest.json", split_manifest_to_json(split) + "\n");
    std::cout << "parsed corpus: " << split.train.size() + split.val.size() + split.test.size()
              << " trajectories (" << dropped << " dropped as too short)\n"
              << "splits: train " << split.train.size() << ", val " << split.val.size()
              << ", test " << split.test.size() << "\n"
              << "manifest: " << (fs::path(out_dir) / "manifest.json").string() << "\n";
    return 0;
}

int cmd_build_graph(const RunConfig& config, const std::string& corpus_path,
                    const std::string& manifest_path, const std::string& out_dir) {
    SplitSet split = resolve_split(config, corpus_path, manifest_path);
    SpatialGraph graph = build_graph(split.train);
    emit_run_config(config, "build-graph", out_dir);
    write_file(fs::path(out_dir) / "graph.json", graph.to_json(manifest_hash_of(split)) + "\n");

    json stats = {{"nodes", graph.node_count()},
                  {"edges", graph.edge_count()},
                  {"total_weight", graph.total_weight()},
                  {"built_from", manifest_hash_of(split)}};
    write_file(fs::path(out_dir) / "graph_stats.json", stats.dump(2) + "\n");
    std::cout << "graph: " << graph.node_count() << " nodes, " << graph.edge_count()
              << " edges, total weight " << graph.total_weight() << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, const std::string& corpus_path,
              const std::string& manifest_path, const std::string& out_dir) {
    SplitSet split = resolve_split(config, corpus_path, manifest_path);
    emit_run_config(config, "train", out_dir);
    if (manifest_path.empty())
        write_file(fs::path(out_dir) / "manifest.json", split_manifest_to_json(split) + "\n");

    Checkpoint ckpt = train(split, config.model, config.train);
    ckpt.save((fs::path(out_dir) / "checkpoint.json").string());
    write_file(fs::path(out_dir) / "history.jsonl", ckpt.history.to_jsonl());

    std::cout << "variant: " << variant_name(config.model.variant) << "\n"
              << "epochs run: " << ckpt.history.epochs.size() << " (stop: "
              << ckpt.history.stop_reason << ", best epoch " << ckpt.history.best_epoch << ")\n"
              << "best val loss: "
              << ckpt.history.epochs[static_cast<std::size_t>(ckpt.history.best_epoch - 1)]
                     .val_loss
              << "\n"
              << "checkpoint: " << (fs::path(out_dir) / "checkpoint.json").string() << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& config, const std::string& checkpoint_path,
                 const std::string& corpus_path, const std::string& manifest_path,
                 const std::string& out_dir) {
    Checkpoint ckpt = Checkpoint::load(checkpoint_path);
    SplitSet split = resolve_split(config, corpus_path, manifest_path);
    auto pairs = sample_pairs(split.test, config.train.pairs_per_trajectory,
                              config.train.seed ^ 0x7E57ull);
    BucketReport report = evaluate(ckpt, pairs);

    emit_run_config(config, "evaluate", out_dir);
    write_file(fs::path(out_dir) / "report.csv", report.to_csv());
    write_file(fs::path(out_dir) / "report.json", report.to_json() + "\n");
    std::cout << report.to_csv();
    return 0;
}

int cmd_crossval(const RunConfig& config, const std::string& corpus_path,
                 const std::string& out_dir, int jobs) {
    auto parsed = parse_hurdat2_file(corpus_path);
    emit_run_config(config, "crossval", out_dir);

    json comparison;
    std::ostringstream csv;
    csv << "variant,bucket,folds,mae_lat_mean,mae_lat_std,mae_lon_mean,mae_lon_std\n";

    for (Variant variant : {Variant::vanilla_transformer, Variant::graph_transformer}) {
        ModelConfig model = config.model;
        model.variant = variant;
        auto results = kfold(parsed.trajectories, config.folds, model, config.train,
                             config.val_fraction, jobs);

        std::vector<BucketReport> reports;
        for (const auto& fold : results) reports.push_back(fold.report);
        CrossValSummary summary = aggregate_folds(reports);
        comparison[variant_name(variant)] = json::parse(summary.to_json());

        for (const auto& b : summary.buckets)
            csv << variant_name(variant) << "," << b.label << "," << b.folds << "," << b.mean_lat
                << "," << b.std_lat << "," << b.mean_lon << "," << b.std_lon << "\n";
        csv << variant_name(variant) << ",overall," << summary.overall.folds << ","
            << summary.overall.mean_lat << "," << summary.overall.std_lat << ","
            << summary.overall.mean_lon << "," << summary.overall.std_lon << "\n";

        for (const auto& fold : results) {
            std::string stem = std::string(variant_name(variant)) + "_fold" +
                               std::to_string(fold.report.fold_id);
            write_file(fs::path(out_dir) / (stem + "_report.json"), fold.report.to_json() + "\n");
        }
        std::cout << variant_name(variant) << " overall MAE: lat " << summary.overall.mean_lat
                  << ", lon " << summary.overall.mean_lon << "\n";
    }

    write_file(fs::path(out_dir) / "comparison.json", comparison.dump(2) + "\n");
    write_file(fs::path(out_dir) / "comparison.csv", csv.str());
    std::cout << "comparison: " << (fs::path(out_dir) / "comparison.csv").string() << "\n";
    return 0;
}

int cmd_predict(const RunConfig& config, const std::string& checkpoint_path,
                const std::string& prefix_path, const std::string& out_dir) {
    Checkpoint ckpt = Checkpoint::load(checkpoint_path);
    auto prefix = read_prefix_csv(prefix_path);
    auto guess = predict(ckpt, prefix);

    emit_run_config(config, "predict", out_dir);
    json j = {{"lat", guess[0]}, {"lon", guess[1]}, {"prefix_steps", prefix.size()}};
    write_file(fs::path(out_dir) / "prediction.json", j.dump(2) + "\n");
    std::cout << guess[0] << "," << guess[1] << "\n";
    return 0;
}

int cmd_synth(const RunConfig& config, const std::string& out_path,
              const std::string& latent_out) {
    SynthConfig synth = config.synth;
    synth.seed = config.train.seed;
    auto corpus = generate_synthetic(synth);

    if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    write_file(out_path, serialize_hurdat2(corpus.trajectories));

    if (!latent_out.empty()) {
        json j;
        j["nodes"] = json::array();
        for (const auto& c : corpus.latent.node_coords) j["nodes"].push_back({c[0], c[1]});
        j["edges"] = json::array();
        for (const auto& e : corpus.latent.edges) j["edges"].push_back({e.src, e.dst, e.weight});
        write_file(latent_out, j.dump() + "\n");
    }
    std::cout << "wrote " << corpus.trajectories.size() << " synthetic trajectories to "
              << out_path << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    int failures = 0;
    for (const auto& result : run_gradcheck_suite(seed)) {
        std::cout << (result.passed ? "PASS" : "FAIL") << "  " << result.name << "  max rel err "
                  << result.max_rel_err << " (threshold " << result.threshold << ")\n";
        if (!result.passed) ++failures;
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hurricane next-location prediction with spatial graphs + transformers"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name

    std::string config_path, corpus, manifest, checkpoint, prefix, out_dir = "out";
    std::string synth_out, latent_out, variant;
    std::uint64_t seed = 0;
    int jobs = 1;

    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "seed override");
    auto* variant_opt = app.add_option("--variant", variant, "graph | vanilla");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--jobs", jobs, "worker threads for crossval folds");

    auto* prepare = app.add_subcommand("prepare", "parse a corpus and emit the split manifest");
    prepare->add_option("--corpus", corpus, "HURDAT2 corpus file")->required();

    auto* build_graph_cmd = app.add_subcommand("build-graph", "emit the spatial graph as JSON");
    build_graph_cmd->add_option("--corpus", corpus)->required();
    build_graph_cmd->add_option("--manifest", manifest, "split manifest (else split internally)");

    auto* train_cmd = app.add_subcommand("train", "train a model and emit a checkpoint");
    train_cmd->add_option("--corpus", corpus)->required();
    train_cmd->add_option("--manifest", manifest, "split manifest (else split internally)");

    auto* eval_cmd = app.add_subcommand("evaluate", "bucketed MAE on the test split");
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--corpus", corpus)->required();
    eval_cmd->add_option("--manifest", manifest, "split manifest (else split internally)");

    auto* crossval_cmd =
        app.add_subcommand("crossval", "k-fold cross validation of both variants");
    crossval_cmd->add_option("--corpus", corpus)->required();

    auto* predict_cmd = app.add_subcommand("predict", "next location for a prefix CSV");
    predict_cmd->add_option("--checkpoint", checkpoint)->required();
    predict_cmd->add_option("--prefix", prefix, "CSV of observations")->required();

    auto* synth_cmd = app.add_subcommand("synth", "emit a synthetic corpus");
    synth_cmd->add_option("--out-file", synth_out, "corpus file to write")->required();
    synth_cmd->add_option("--latent-out", latent_out, "also dump the latent graph JSON");

    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient verification");
    (void)gradcheck_cmd;

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config = load_config(config_path);
        if (seed_opt->count() > 0) config.train.seed = seed;
        if (variant_opt->count() > 0) config.model.variant = variant_from_name(variant);
        config.model.validate();
        config.train.validate();

        if (prepare->parsed()) return cmd_prepare(config, corpus, out_dir);
        if (build_graph_cmd->parsed()) return cmd_build_graph(config, corpus, manifest, out_dir);
        if (train_cmd->parsed()) return cmd_train(config, corpus, manifest, out_dir);
        if (eval_cmd->parsed())
            return cmd_evaluate(config, checkpoint, corpus, manifest, out_dir);
        if (crossval_cmd->parsed()) return cmd_crossval(config, corpus, out_dir, jobs);
        if (predict_cmd->parsed()) return cmd_predict(config, checkpoint, prefix, out_dir);
        if (synth_cmd->parsed()) return cmd_synth(config, synth_out, latent_out);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(config.train.seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
