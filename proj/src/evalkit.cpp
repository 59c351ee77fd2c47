#include "stormcast/evalkit.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stormcast {

using nlohmann::json;

const std::array<const char*, 3> kBucketLabels = {"0-5", "6-10", "11-16"};

int bucket_of(int seq_len) {
    if (seq_len <= 5) return 0;
    if (seq_len <= 10) return 1;
    return 2;
}

std::string BucketReport::to_csv() const {
    std::ostringstream out;
    out << "bucket,count,mae_lat,mae_lon\n";
    for (const auto& b : buckets)
        out << b.label << "," << b.count << "," << b.mae_lat << "," << b.mae_lon << "\n";
    out << "overall," << total_pairs << "," << overall_lat << "," << overall_lon << "\n";
    return out.str();
}

std::string BucketReport::to_json() const {
    json jb = json::array();
    for (const auto& b : buckets)
        jb.push_back({{"bucket", b.label},
                      {"count", b.count},
                      {"mae_lat", b.mae_lat},
                      {"mae_lon", b.mae_lon}});
    json j = {{"variant", variant},
              {"fold_id", fold_id},
              {"total_pairs", total_pairs},
              {"buckets", jb},
              {"overall", {{"mae_lat", overall_lat}, {"mae_lon", overall_lon}}}};
    return j.dump(2);
}

BucketReport evaluate(const Checkpoint& checkpoint, const std::vector<ExamplePair>& test_pairs) {
    if (test_pairs.empty()) throw std::invalid_argument("evaluate: empty test set");

    std::vector<ModelInput> inputs;
    inputs.reserve(test_pairs.size());
    for (const auto& pair : test_pairs)
        inputs.push_back(assemble(pair, checkpoint.graph, checkpoint.scaler,
                                  checkpoint.train.k_hops,
                                  static_cast<std::size_t>(checkpoint.train.neighbor_cap)));

    std::array<double, 3> sum_lat{}, sum_lon{};
    std::array<std::size_t, 3> counts{};

    const std::size_t chunk = 256;
    for (std::size_t begin = 0; begin < inputs.size(); begin += chunk) {
        std::size_t end = std::min(begin + chunk, inputs.size());
        std::vector<const ModelInput*> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&inputs[i]);
        auto preds = predict_batch(checkpoint.params, batch, checkpoint.model);
        for (std::size_t i = begin; i < end; ++i) {
            const ModelInput& input = inputs[i];
            auto global = from_local_frame(preds[i - begin], input.origin_lat, input.origin_lon);
            int b = bucket_of(input.seq_len());
            sum_lat[static_cast<std::size_t>(b)] +=
                std::abs(global[0] - input.target_global[0]);
            sum_lon[static_cast<std::size_t>(b)] +=
                std::abs(global[1] - input.target_global[1]);
            counts[static_cast<std::size_t>(b)] += 1;
        }
    }

    BucketReport report;
    report.total_pairs = test_pairs.size();
    int non_empty = 0;
    for (std::size_t b = 0; b < 3; ++b) {
        BucketStat stat;
        stat.label = kBucketLabels[b];
        stat.count = counts[b];
        if (counts[b] > 0) {
            stat.mae_lat = sum_lat[b] / static_cast<double>(counts[b]);
            stat.mae_lon = sum_lon[b] / static_cast<double>(counts[b]);
            report.overall_lat += stat.mae_lat;
            report.overall_lon += stat.mae_lon;
            ++non_empty;
        }
        report.buckets.push_back(stat);
    }
    if (non_empty > 0) {
        report.overall_lat /= non_empty;
        report.overall_lon /= non_empty;
    }
    report.variant = variant_name(checkpoint.model.variant);
    return report;
}

namespace {

AggregateStat aggregate_values(const std::string& label, const std::vector<double>& lat,
                               const std::vector<double>& lon) {
    AggregateStat stat;
    stat.label = label;
    stat.folds = lat.size();
    if (lat.empty()) return stat;
    double n = static_cast<double>(lat.size());
    for (double v : lat) stat.mean_lat += v;
    for (double v : lon) stat.mean_lon += v;
    stat.mean_lat /= n;
    stat.mean_lon /= n;
    for (double v : lat) stat.std_lat += (v - stat.mean_lat) * (v - stat.mean_lat);
    for (double v : lon) stat.std_lon += (v - stat.mean_lon) * (v - stat.mean_lon);
    stat.std_lat = std::sqrt(stat.std_lat / n);
    stat.std_lon = std::sqrt(stat.std_lon / n);
    return stat;
}

}  // namespace

CrossValSummary aggregate_folds(const std::vector<BucketReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_folds: no reports");
    CrossValSummary summary;
    summary.variant = reports.front().variant;

    for (std::size_t b = 0; b < kBucketLabels.size(); ++b) {
        std::vector<double> lat, lon;
        for (const auto& r : reports) {
            if (r.buckets.at(b).count == 0) continue;
            lat.push_back(r.buckets.at(b).mae_lat);
            lon.push_back(r.buckets.at(b).mae_lon);
        }
        summary.buckets.push_back(aggregate_values(kBucketLabels[b], lat, lon));
    }
    std::vector<double> lat, lon;
    for (const auto& r : reports) {
        lat.push_back(r.overall_lat);
        lon.push_back(r.overall_lon);
    }
    summary.overall = aggregate_values("overall", lat, lon);
    return summary;
}

std::string CrossValSummary::to_json() const {
    json jb = json::array();
    auto stat_json = [](const AggregateStat& s) {
        return json{{"bucket", s.label},     {"folds", s.folds},
                    {"mae_lat_mean", s.mean_lat}, {"mae_lat_std", s.std_lat},
                    {"mae_lon_mean", s.mean_lon}, {"mae_lon_std", s.std_lon}};
    };
    for (const auto& b : buckets) jb.push_back(stat_json(b));
    json j = {{"variant", variant}, {"buckets", jb}, {"overall", stat_json(overall)}};
    return j.dump(2);
}

std::array<double, 2> predict(const Checkpoint& checkpoint,
                              const std::vector<Observation>& prefix) {
    if (prefix.empty()) throw std::invalid_argument("predict: empty prefix");
    ModelInput input =
        assemble_prefix(prefix, checkpoint.graph, checkpoint.scaler, checkpoint.train.k_hops,
                        static_cast<std::size_t>(checkpoint.train.neighbor_cap));
    auto preds = predict_batch(checkpoint.params, {&input}, checkpoint.model);
    return from_local_frame(preds[0], input.origin_lat, input.origin_lon);
}

}  // namespace stormcast
