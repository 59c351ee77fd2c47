#include "stormcast/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <thread>

namespace stormcast {

namespace {

std::vector<std::string> storm_ids(const std::vector<Trajectory>& trajectories) {
    std::vector<std::string> ids;
    ids.reserve(trajectories.size());
    for (const auto& t : trajectories) ids.push_back(t.storm_id);
    return ids;
}

double smooth_l1_value(const std::array<double, 2>& pred, const std::array<double, 2>& target,
                       double beta = 1.0) {
    double total = 0.0;
    for (int c = 0; c < 2; ++c) {
        double d = pred[c] - target[c];
        double ad = std::abs(d);
        total += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
    }
    return total;
}

double eval_loss(const Parameters& params, const ModelConfig& config,
                 const std::vector<ModelInput>& inputs, int batch_size) {
    double total = 0.0;
    for (std::size_t begin = 0; begin < inputs.size(); begin += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(begin + static_cast<std::size_t>(batch_size), inputs.size());
        std::vector<const ModelInput*> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&inputs[i]);
        auto preds = predict_batch(params, batch, config);
        for (std::size_t i = begin; i < end; ++i)
            total += smooth_l1_value(preds[i - begin], inputs[i].target_local);
    }
    return total / static_cast<double>(inputs.size());
}

void clip_gradients(ParamMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    double factor = max_norm / norm;
    for (auto& [name, g] : grads)
        for (double& v : g.data) v *= factor;
}

}  // namespace

Checkpoint train(const SplitSet& split, const ModelConfig& model_config,
                 const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    if (split.train.empty()) throw std::invalid_argument("train: empty training split");

    const std::string manifest_hash =
        split_manifest_hash(storm_ids(split.train), storm_ids(split.val), storm_ids(split.test));

    SpatialGraph graph = build_graph(split.train);

    auto train_pairs =
        sample_pairs(split.train, train_config.pairs_per_trajectory, train_config.seed);
    if (train_pairs.empty()) throw std::invalid_argument("train: no training pairs");
    auto val_pairs = split.val.empty()
                         ? train_pairs
                         : sample_pairs(split.val, train_config.pairs_per_trajectory,
                                        train_config.seed ^ 0x7A1E5EEDull);

    Scaler scaler;
    if (train_config.scaler_global) {
        std::vector<ExamplePair> all = train_pairs;
        auto vp = sample_pairs(split.val, train_config.pairs_per_trajectory,
                               train_config.seed ^ 0x7A1E5EEDull);
        auto tp = sample_pairs(split.test, train_config.pairs_per_trajectory,
                               train_config.seed ^ 0x7E57EEDull);
        all.insert(all.end(), vp.begin(), vp.end());
        all.insert(all.end(), tp.begin(), tp.end());
        scaler = fit_scaler(all);
    } else {
        scaler = fit_scaler(train_pairs);
    }
    scaler.fitted_on = manifest_hash;

    auto cap = static_cast<std::size_t>(train_config.neighbor_cap);
    std::vector<ModelInput> train_inputs, val_inputs;
    train_inputs.reserve(train_pairs.size());
    for (const auto& p : train_pairs)
        train_inputs.push_back(assemble(p, graph, scaler, train_config.k_hops, cap));
    val_inputs.reserve(val_pairs.size());
    for (const auto& p : val_pairs)
        val_inputs.push_back(assemble(p, graph, scaler, train_config.k_hops, cap));

    Parameters params = init_params(model_config, train_config.seed);
    AdamState adam;
    adam.hyper.lr = train_config.lr;

    Rng shuffle_rng(train_config.seed ^ 0x5350F1E5ull);
    Rng dropout_rng(train_config.seed ^ 0xD50F0D50ull);

    TrainHistory history;
    EarlyStopper stopper(train_config.early_stop_min_delta, train_config.early_stop_patience);
    Parameters best_params = params;
    AdamState best_adam = adam;
    history.stop_reason = "max_epochs";

    std::vector<std::size_t> order(train_inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        auto epoch_start = std::chrono::steady_clock::now();
        rng_shuffle(shuffle_rng, order);

        double train_loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(train_config.batch_size), ++batch_index) {
            std::size_t end =
                std::min(begin + static_cast<std::size_t>(train_config.batch_size), order.size());

            std::vector<const ModelInput*> batch;
            Tensor targets = Tensor::zeros({static_cast<int>(end - begin), 2});
            for (std::size_t i = begin; i < end; ++i) {
                const ModelInput& input = train_inputs[order[i]];
                batch.push_back(&input);
                targets.data[(i - begin) * 2] = input.target_local[0];
                targets.data[(i - begin) * 2 + 1] = input.target_local[1];
            }

            Tape tape;
            auto vars = lease_params(tape, params, true);
            ForwardOptions options;
            options.training = true;
            options.dropout_rng = &dropout_rng;
            Var pred = forward(tape, batch, vars, model_config, options);
            Var loss = smooth_l1(pred, targets);

            double loss_value = loss.value().item();
            if (!std::isfinite(loss_value))
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batch_index));
            train_loss_sum += loss_value * static_cast<double>(end - begin);

            tape.backward(loss);
            ParamMap grads;
            for (const auto& [name, var] : vars) {
                if (var.grad().data.empty()) {
                    grads[name] = Tensor::zeros(var.value().shape);
                } else {
                    grads[name] = var.grad();
                }
            }
            if (train_config.grad_clip > 0.0) clip_gradients(grads, train_config.grad_clip);
            adam_step(params, grads, adam);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = train_loss_sum / static_cast<double>(train_inputs.size());
        record.val_loss = eval_loss(params, model_config, val_inputs, train_config.batch_size);
        record.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        history.epochs.push_back(record);

        auto decision = stopper.observe(epoch, record.val_loss);
        if (decision.new_minimum) {
            best_params = params;
            best_adam = adam;
        }
        if (decision.stop) {
            history.stop_reason = "early_stop";
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();

    Checkpoint checkpoint;
    checkpoint.model = model_config;
    checkpoint.train = train_config;
    checkpoint.params = std::move(best_params);
    checkpoint.adam = std::move(best_adam);
    checkpoint.scaler = scaler;
    char hash_buf[17];
    std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                  static_cast<unsigned long long>(graph.content_hash()));
    checkpoint.graph_hash = hash_buf;
    checkpoint.graph = std::move(graph);
    checkpoint.history = std::move(history);
    return checkpoint;
}

std::vector<FoldResult> kfold(const std::vector<Trajectory>& trajectories, int k,
                              const ModelConfig& model_config, const TrainConfig& train_config,
                              double val_fraction, int jobs) {
    if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
    if (trajectories.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("kfold: fewer trajectories than folds");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw std::invalid_argument("kfold: val_fraction must be in [0, 1)");

    Strata strata = stratify_by_length(trajectories, std::max<std::size_t>(3, static_cast<std::size_t>(k)));
    for (const auto& group : strata.groups)
        if (group.size() < static_cast<std::size_t>(k))
            throw std::invalid_argument("kfold: a stratum has fewer trajectories than folds");

    // Deal each shuffled stratum round-robin so folds stay length-balanced.
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    Rng rng(train_config.seed ^ 0xF01D5EEDull);
    for (auto group : strata.groups) {
        rng_shuffle(rng, group);
        for (std::size_t i = 0; i < group.size(); ++i)
            folds[i % static_cast<std::size_t>(k)].push_back(group[i]);
    }

    std::vector<FoldResult> results(static_cast<std::size_t>(k));
    std::atomic<int> next_round{0};

    auto run_round = [&](int round) {
        auto r = static_cast<std::size_t>(round);
        SplitSet split;
        split.seed = train_config.seed;
        for (std::size_t idx : folds[r]) split.test.push_back(trajectories[idx]);

        std::vector<std::size_t> pool;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            if (f == r) continue;
            pool.insert(pool.end(), folds[f].begin(), folds[f].end());
        }
        Rng pool_rng(train_config.seed ^ (0xCA4E5EEDull + r));
        rng_shuffle(pool_rng, pool);
        auto n_val = static_cast<std::size_t>(
            std::floor(val_fraction * static_cast<double>(pool.size())));
        if (val_fraction > 0.0 && n_val == 0) n_val = 1;
        if (n_val >= pool.size()) throw std::invalid_argument("kfold: validation carve too large");
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (i < n_val) {
                split.val.push_back(trajectories[pool[i]]);
            } else {
                split.train.push_back(trajectories[pool[i]]);
            }
        }

        // leakage guard: the round's test ids must be disjoint from
        // everything that feeds graph or scaler construction
        std::set<std::string> fit_ids;
        for (const auto& t : split.train) fit_ids.insert(t.storm_id);
        for (const auto& t : split.val) fit_ids.insert(t.storm_id);
        for (const auto& t : split.test)
            if (fit_ids.count(t.storm_id))
                throw std::logic_error("kfold: storm " + t.storm_id +
                                       " appears in both test and fit sets");

        TrainConfig round_config = train_config;
        round_config.seed = train_config.seed ^ (0xFA0ull * (r + 1));
        Checkpoint checkpoint = train(split, model_config, round_config);

        auto test_pairs = sample_pairs(split.test, train_config.pairs_per_trajectory,
                                       train_config.seed ^ (0xE57ull + r));
        BucketReport report = evaluate(checkpoint, test_pairs);
        report.fold_id = round;
        results[r] = FoldResult{std::move(checkpoint), std::move(report)};
    };

    jobs = std::max(1, std::min(jobs, k));
    if (jobs == 1) {
        for (int round = 0; round < k; ++round) run_round(round);
    } else {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w]() {
                try {
                    for (int round = next_round.fetch_add(1); round < k;
                         round = next_round.fetch_add(1))
                        run_round(round);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
    }
    return results;
}

}  // namespace stormcast
