#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stormcast/evalkit.hpp"
#include "stormcast/trainer.hpp"

using namespace stormcast;

namespace {

// A checkpoint whose prediction is always (0,0) in the local frame, i.e. the
// window origin in global coordinates. Lets error arithmetic be staged
// exactly through the real evaluation path.
Checkpoint zero_checkpoint() {
    Checkpoint ckpt;
    ckpt.model = ModelConfig::tiny();
    ckpt.params = init_params(ckpt.model, 1);
    for (auto& [name, tensor] : ckpt.params)
        if (name.find("ln") == std::string::npos)  // keep layer norms sane
            std::fill(tensor.data.begin(), tensor.data.end(), 0.0);
    ckpt.scaler = fit_scaler({});
    return ckpt;
}

ExamplePair pair_with_error(int seq_len, double lat_err, double lon_err) {
    ExamplePair pair;
    for (int i = 0; i < seq_len; ++i) {
        Observation obs;
        obs.lat = 20.0;
        obs.lon = -70.0;
        pair.input_steps.push_back(obs);
    }
    pair.origin_lat = 20.0;
    pair.origin_lon = -70.0;
    pair.target.lat = 20.0 + lat_err;
    pair.target.lon = -70.0 + lon_err;
    pair.source_id = "E:" + std::to_string(seq_len);
    return pair;
}

}  // namespace

TEST_CASE("bucket_of maps sequence lengths to the three buckets") {
    CHECK(bucket_of(1) == 0);
    CHECK(bucket_of(5) == 0);
    CHECK(bucket_of(6) == 1);
    CHECK(bucket_of(10) == 1);
    CHECK(bucket_of(11) == 2);
    CHECK(bucket_of(15) == 2);
    CHECK(bucket_of(16) == 2);  // length 16 joins the last bucket
}

TEST_CASE("perfect predictions give zero MAE everywhere") {
    Checkpoint ckpt = zero_checkpoint();
    std::vector<ExamplePair> pairs = {pair_with_error(2, 0.0, 0.0),
                                      pair_with_error(7, 0.0, 0.0),
                                      pair_with_error(12, 0.0, 0.0)};
    BucketReport report = evaluate(ckpt, pairs);
    CHECK(report.overall_lat == doctest::Approx(0.0));
    CHECK(report.overall_lon == doctest::Approx(0.0));
    for (const auto& b : report.buckets) {
        CHECK(b.count == 1);
        CHECK(b.mae_lat == doctest::Approx(0.0));
    }
}

TEST_CASE("macro average over one pair per bucket") {
    Checkpoint ckpt = zero_checkpoint();
    std::vector<ExamplePair> pairs = {pair_with_error(3, 0.3, 0.1),
                                      pair_with_error(8, 0.6, 0.2),
                                      pair_with_error(13, 0.9, 0.3)};
    BucketReport report = evaluate(ckpt, pairs);
    CHECK(report.overall_lat == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(report.overall_lon == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(report.buckets[0].mae_lat == doctest::Approx(0.3));
    CHECK(report.buckets[1].mae_lat == doctest::Approx(0.6));
    CHECK(report.buckets[2].mae_lat == doctest::Approx(0.9));
    CHECK(report.total_pairs == 3);
}

TEST_CASE("empty buckets are excluded from the macro average") {
    Checkpoint ckpt = zero_checkpoint();
    std::vector<ExamplePair> pairs = {pair_with_error(2, 0.4, 0.4),
                                      pair_with_error(3, 0.2, 0.2)};
    BucketReport report = evaluate(ckpt, pairs);
    CHECK(report.buckets[0].count == 2);
    CHECK(report.buckets[1].count == 0);
    CHECK(report.buckets[2].count == 0);
    CHECK(report.overall_lat == doctest::Approx(0.3));
}

TEST_CASE("evaluate matches an independent single-pass accumulator") {
    SynthConfig config;
    config.n_trajectories = 40;
    config.latent_graph_nodes = 15;
    config.seed = 31;
    auto corpus = generate_synthetic(config);
    auto split = stratified_split(corpus.trajectories, SplitRatios{}, 2);

    TrainConfig tc;
    tc.epochs = 1;
    tc.pairs_per_trajectory = 5;
    tc.seed = 3;
    Checkpoint ckpt = train(split, ModelConfig::tiny(), tc);

    auto pairs = sample_pairs(corpus.trajectories, 5, 99);
    REQUIRE(pairs.size() >= 200);
    pairs.resize(200);
    BucketReport report = evaluate(ckpt, pairs);

    // independent re-aggregation, one pair at a time through predict()
    double sum_lat[3] = {0, 0, 0}, sum_lon[3] = {0, 0, 0};
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& pair : pairs) {
        auto guess = predict(ckpt, pair.input_steps);
        int len = static_cast<int>(pair.input_steps.size());
        int b = len <= 5 ? 0 : len <= 10 ? 1 : 2;
        sum_lat[b] += std::abs(guess[0] - pair.target.lat);
        sum_lon[b] += std::abs(guess[1] - pair.target.lon);
        counts[b] += 1;
    }
    double overall_lat = 0.0, overall_lon = 0.0;
    int non_empty = 0;
    for (int b = 0; b < 3; ++b) {
        if (counts[b] == 0) continue;
        ++non_empty;
        overall_lat += sum_lat[b] / static_cast<double>(counts[b]);
        overall_lon += sum_lon[b] / static_cast<double>(counts[b]);
        CHECK(report.buckets[static_cast<std::size_t>(b)].count == counts[b]);
        CHECK(report.buckets[static_cast<std::size_t>(b)].mae_lat ==
              doctest::Approx(sum_lat[b] / static_cast<double>(counts[b])).epsilon(1e-12));
    }
    CHECK(report.overall_lat == doctest::Approx(overall_lat / non_empty).epsilon(1e-12));
    CHECK(report.overall_lon == doctest::Approx(overall_lon / non_empty).epsilon(1e-12));
}

TEST_CASE("evaluate rejects an empty test set") {
    Checkpoint ckpt = zero_checkpoint();
    CHECK_THROWS_AS(evaluate(ckpt, {}), std::invalid_argument);
}

TEST_CASE("aggregate_folds: single fold equals itself with zero std") {
    Checkpoint ckpt = zero_checkpoint();
    std::vector<ExamplePair> pairs = {pair_with_error(3, 0.3, 0.1)};
    BucketReport report = evaluate(ckpt, pairs);
    auto summary = aggregate_folds({report});
    CHECK(summary.overall.mean_lat == doctest::Approx(report.overall_lat));
    CHECK(summary.overall.std_lat == doctest::Approx(0.0));
    CHECK(summary.overall.folds == 1);
}

TEST_CASE("aggregate_folds: means and stds across folds") {
    Checkpoint ckpt = zero_checkpoint();
    BucketReport a = evaluate(ckpt, {pair_with_error(3, 0.3, 0.3)});
    BucketReport b = evaluate(ckpt, {pair_with_error(3, 0.5, 0.5)});
    auto summary = aggregate_folds({a, b});
    CHECK(summary.overall.mean_lat == doctest::Approx(0.4));
    CHECK(summary.overall.std_lat == doctest::Approx(0.1));

    // five folds vs a spreadsheet-style recomputation
    std::vector<double> values = {0.1, 0.2, 0.4, 0.7, 1.1};
    std::vector<BucketReport> folds;
    for (double v : values) folds.push_back(evaluate(ckpt, {pair_with_error(3, v, v)}));
    auto five = aggregate_folds(folds);
    double mean = (0.1 + 0.2 + 0.4 + 0.7 + 1.1) / 5.0;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= 5.0;
    CHECK(five.overall.mean_lat == doctest::Approx(mean).epsilon(1e-12));
    CHECK(five.overall.std_lat == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
}

TEST_CASE("predict: only the last 16 steps matter") {
    Checkpoint ckpt = zero_checkpoint();
    std::vector<Observation> prefix;
    for (int i = 0; i < 20; ++i) {
        Observation obs;
        obs.lat = 20.0 + 0.1 * i;
        obs.lon = -70.0 - 0.1 * i;
        prefix.push_back(obs);
    }
    auto full = predict(ckpt, prefix);
    std::vector<Observation> tail(prefix.begin() + 4, prefix.end());
    auto truncated = predict(ckpt, tail);
    CHECK(full[0] == doctest::Approx(truncated[0]).epsilon(1e-12));
    CHECK(full[1] == doctest::Approx(truncated[1]).epsilon(1e-12));
}

TEST_CASE("predict: far-from-graph prefixes still produce finite output") {
    SynthConfig config;
    config.n_trajectories = 12;
    config.latent_graph_nodes = 8;
    config.seed = 17;
    auto corpus = generate_synthetic(config);
    auto split = stratified_split(corpus.trajectories, SplitRatios{}, 2);
    TrainConfig tc;
    tc.epochs = 1;
    tc.pairs_per_trajectory = 1;
    tc.seed = 4;
    Checkpoint ckpt = train(split, ModelConfig::tiny(), tc);

    std::vector<Observation> prefix;
    Observation far;
    far.lat = 80.0;  // nowhere near the synthetic region
    far.lon = 10.0;
    prefix.push_back(far);
    auto guess = predict(ckpt, prefix);
    CHECK(std::isfinite(guess[0]));
    CHECK(std::isfinite(guess[1]));

    CHECK_THROWS_AS(predict(ckpt, {}), std::invalid_argument);
}

TEST_CASE("report CSV and JSON carry the fixed column order") {
    Checkpoint ckpt = zero_checkpoint();
    BucketReport report =
        evaluate(ckpt, {pair_with_error(3, 0.3, 0.1), pair_with_error(8, 0.6, 0.2)});
    std::string csv = report.to_csv();
    CHECK(csv.find("bucket,count,mae_lat,mae_lon") == 0);
    CHECK(csv.find("0-5,") != std::string::npos);
    CHECK(csv.find("6-10,") != std::string::npos);
    CHECK(csv.find("11-16,") != std::string::npos);
    CHECK(csv.find("overall,") != std::string::npos);

    std::string json = report.to_json();
    CHECK(json.find("\"buckets\"") != std::string::npos);
    CHECK(json.find("\"overall\"") != std::string::npos);
}
