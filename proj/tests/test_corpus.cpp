#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "stormcast/corpus.hpp"

using namespace stormcast;

namespace {

const char* kIreneSample =
    "AL092011, IRENE, 2,\n"
    "20110821, 0000,  , TS, 28.0N, 76.1W, 45, 1006, 150, 75, 0, 100, 0, 0, 0, 0, 0, 0, 0, 0,\n"
    "20110821, 0600,  , TS, 28.3N, 76.9W, 45, -999, 150, 75, 0, 100, 0, 0, 0, 0, 0, 0, 0, 0,\n";

Trajectory make_traj(const std::string& id, int length, double lat0 = 20.0, double lon0 = -70.0) {
    Trajectory t;
    t.storm_id = id;
    t.name = "TEST";
    for (int i = 0; i < length; ++i) {
        Observation obs;
        obs.time = {20200101, i * 100};
        obs.lat = lat0 + 0.3 * i;
        obs.lon = lon0 - 0.2 * i;
        obs.weather[0] = 40.0 + i;
        obs.weather[1] = 1000.0;
        for (int f = 2; f < kWeatherDim; ++f) obs.weather[f] = f;
        t.observations.push_back(obs);
    }
    return t;
}

std::vector<Trajectory> uniform_corpus(int n, int length) {
    std::vector<Trajectory> out;
    for (int i = 0; i < n; ++i) out.push_back(make_traj("ST" + std::to_string(i), length));
    return out;
}

}  // namespace

TEST_CASE("parse_hurdat2 converts hemispheres and sentinels") {
    std::istringstream in(kIreneSample);
    auto result = parse_hurdat2(in);
    REQUIRE(result.trajectories.size() == 1);
    const auto& traj = result.trajectories[0];
    CHECK(traj.storm_id == "AL092011");
    CHECK(traj.name == "IRENE");
    REQUIRE(traj.observations.size() == 2);

    const auto& first = traj.observations[0];
    CHECK(first.lat == doctest::Approx(28.0));
    CHECK(first.lon == doctest::Approx(-76.1));
    CHECK(first.weather[0] == doctest::Approx(45.0));
    CHECK(first.weather[1] == doctest::Approx(1006.0));
    CHECK(first.weather[2] == doctest::Approx(150.0));
    CHECK_FALSE(first.missing[1]);

    // -999 pressure on the second row is a missing flag, not a value
    CHECK(traj.observations[1].missing[1]);
}

TEST_CASE("parse_hurdat2 flags wind sentinel and short radii rows") {
    std::istringstream in(
        "AL011900, ANTIQUE, 2,\n"
        "19000101, 0000,  , HU, 20.0N, 60.0W, -99, -999,\n"
        "19000101, 0600,  , HU, 20.5N, 60.5W, 80, 980,\n");
    auto result = parse_hurdat2(in);
    REQUIRE(result.trajectories.size() == 1);
    const auto& obs = result.trajectories[0].observations[0];
    CHECK(obs.missing[0]);  // wind -99
    CHECK(obs.missing[1]);
    for (int f = 2; f < kWeatherDim; ++f) CHECK(obs.missing[f]);  // absent radii columns
    CHECK_FALSE(result.trajectories[0].observations[1].missing[0]);
}

TEST_CASE("parse_hurdat2 rejects row count mismatch") {
    std::istringstream in(
        "AL092011, IRENE, 3,\n"
        "20110821, 0000,  , TS, 28.0N, 76.1W, 45, 1006,\n"
        "20110821, 0600,  , TS, 28.3N, 76.9W, 45, 1005,\n");
    CHECK_THROWS_AS(parse_hurdat2(in), ParseError);
}

TEST_CASE("parse_hurdat2 rejects non-numeric coordinates") {
    std::istringstream in(
        "AL092011, IRENE, 1,\n"
        "20110821, 0000,  , TS, 2x.0N, 76.1W, 45, 1006,\n");
    CHECK_THROWS_AS(parse_hurdat2(in), ParseError);
}

TEST_CASE("parse_hurdat2 drops single-row storms with a count") {
    std::istringstream in(
        "AL011950, ONEROW, 1,\n"
        "19500101, 0000,  , TS, 20.0N, 60.0W, 45, 1006,\n"
        "AL021950, KEEies, 2,\n"
        "19500101, 0000,  , TS, 21.0N, 61.0W, 45, 1006,\n"
        "19500101, 0600,  , TS, 21.5N, 61.5W, 45, 1006,\n");
    auto result = parse_hurdat2(in);
    CHECK(result.dropped_short == 1);
    REQUIRE(result.trajectories.size() == 1);
    CHECK(result.trajectories[0].storm_id == "AL021950");
}

TEST_CASE("serialize/parse round trip reproduces every retained field") {
    std::istringstream in(kIreneSample);
    auto parsed = parse_hurdat2(in).trajectories;

    std::string text = serialize_hurdat2(parsed);
    std::istringstream in2(text);
    auto reparsed = parse_hurdat2(in2).trajectories;

    REQUIRE(reparsed.size() == parsed.size());
    for (std::size_t t = 0; t < parsed.size(); ++t) {
        CHECK(reparsed[t].storm_id == parsed[t].storm_id);
        REQUIRE(reparsed[t].size() == parsed[t].size());
        for (std::size_t i = 0; i < parsed[t].size(); ++i) {
            const auto& a = parsed[t].observations[i];
            const auto& b = reparsed[t].observations[i];
            CHECK(a.time == b.time);
            CHECK(a.lat == b.lat);  // exact: shortest round-trip formatting
            CHECK(a.lon == b.lon);
            for (int f = 0; f < kWeatherDim; ++f) {
                CHECK(a.missing[f] == b.missing[f]);
                if (!a.missing[f]) CHECK(a.weather[f] == b.weather[f]);
            }
        }
    }
}

TEST_CASE("round trip is exact for synthetic full-precision coordinates") {
    SynthConfig config;
    config.n_trajectories = 5;
    config.latent_graph_nodes = 8;
    config.noise_sigma = 0.07;
    config.seed = 3;
    auto corpus = generate_synthetic(config);

    std::string text = serialize_hurdat2(corpus.trajectories);
    std::istringstream in(text);
    auto reparsed = parse_hurdat2(in).trajectories;
    REQUIRE(reparsed.size() == corpus.trajectories.size());
    for (std::size_t t = 0; t < reparsed.size(); ++t)
        for (std::size_t i = 0; i < reparsed[t].size(); ++i) {
            CHECK(reparsed[t].observations[i].lat == corpus.trajectories[t].observations[i].lat);
            CHECK(reparsed[t].observations[i].lon == corpus.trajectories[t].observations[i].lon);
        }
}

TEST_CASE("stratified_split: single stratum splits 80/10/10 exactly") {
    auto split = stratified_split(uniform_corpus(100, 10), SplitRatios{}, 7);
    CHECK(split.train.size() == 80);
    CHECK(split.val.size() == 10);
    CHECK(split.test.size() == 10);
}

TEST_CASE("stratified_split: determinism and seed sensitivity") {
    auto corpus = uniform_corpus(100, 10);
    auto a = stratified_split(corpus, SplitRatios{}, 42);
    auto b = stratified_split(corpus, SplitRatios{}, 42);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i)
        CHECK(a.train[i].storm_id == b.train[i].storm_id);
    for (std::size_t i = 0; i < a.test.size(); ++i)
        CHECK(a.test[i].storm_id == b.test[i].storm_id);

    auto c = stratified_split(corpus, SplitRatios{}, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.size(); ++i)
        if (a.train[i].storm_id != c.train[i].storm_id) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("stratified_split: two strata of 20 each split 16/2/2") {
    std::vector<Trajectory> corpus;
    for (int i = 0; i < 20; ++i) corpus.push_back(make_traj("SH" + std::to_string(i), 5));
    for (int i = 0; i < 20; ++i) corpus.push_back(make_traj("LO" + std::to_string(i), 30));
    auto split = stratified_split(corpus, SplitRatios{}, 11);

    auto count_len = [&](const std::vector<Trajectory>& v, std::size_t len) {
        return std::count_if(v.begin(), v.end(),
                             [len](const Trajectory& t) { return t.size() == len; });
    };
    CHECK(count_len(split.train, 5) == 16);
    CHECK(count_len(split.val, 5) == 2);
    CHECK(count_len(split.test, 5) == 2);
    CHECK(count_len(split.train, 30) == 16);
    CHECK(count_len(split.val, 30) == 2);
    CHECK(count_len(split.test, 30) == 2);
}

TEST_CASE("stratified_split: storm ids form a disjoint partition") {
    std::vector<Trajectory> corpus;
    for (int i = 0; i < 57; ++i) corpus.push_back(make_traj("ST" + std::to_string(i), 3 + i % 24));
    auto split = stratified_split(corpus, SplitRatios{}, 5);

    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (const auto& t : *part) {
            CHECK(seen.insert(t.storm_id).second);
            ++total;
        }
    }
    CHECK(total == corpus.size());
}

TEST_CASE("stratified_split: manifest round trip") {
    std::vector<Trajectory> corpus;
    for (int i = 0; i < 30; ++i) corpus.push_back(make_traj("ST" + std::to_string(i), 4 + i % 9));
    auto split = stratified_split(corpus, SplitRatios{}, 9);
    auto manifest = split_manifest_to_json(split);
    auto rebuilt = split_from_manifest(corpus, manifest);
    REQUIRE(rebuilt.train.size() == split.train.size());
    for (std::size_t i = 0; i < split.train.size(); ++i)
        CHECK(rebuilt.train[i].storm_id == split.train[i].storm_id);
    CHECK(rebuilt.seed == split.seed);
}

TEST_CASE("sample_pairs: length-2 trajectory yields the only pair") {
    auto pairs = sample_pairs({make_traj("A", 2)}, 1, 0);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].input_steps.size() == 1);
    CHECK(pairs[0].input_steps[0].time == Timestamp{20200101, 0});
    CHECK(pairs[0].target.time == Timestamp{20200101, 100});
}

TEST_CASE("sample_pairs: window capped at 16 preceding steps") {
    auto traj = make_traj("A", 40);
    auto pair = make_pair(traj, 30);
    REQUIRE(pair.input_steps.size() == 16);
    CHECK(pair.input_steps.front().time == traj.observations[14].time);
    CHECK(pair.input_steps.back().time == traj.observations[29].time);
    CHECK(pair.target.time == traj.observations[30].time);
}

TEST_CASE("sample_pairs: request beyond valid targets is capped") {
    auto pairs = sample_pairs({make_traj("A", 5)}, 10, 1);
    REQUIRE(pairs.size() == 4);
    std::set<std::string> ids;
    for (const auto& p : pairs) ids.insert(p.source_id);
    CHECK(ids == std::set<std::string>{"A:1", "A:2", "A:3", "A:4"});
}

TEST_CASE("sample_pairs: reconstruction from source reproduces each pair") {
    auto traj = make_traj("A", 25);
    auto pairs = sample_pairs({traj}, 6, 99);
    for (const auto& pair : pairs) {
        auto colon = pair.source_id.find(':');
        std::size_t target_index = std::stoul(pair.source_id.substr(colon + 1));
        auto rebuilt = make_pair(traj, target_index);
        REQUIRE(rebuilt.input_steps.size() == pair.input_steps.size());
        for (std::size_t i = 0; i < rebuilt.input_steps.size(); ++i) {
            CHECK(rebuilt.input_steps[i].lat == pair.input_steps[i].lat);
            CHECK(rebuilt.input_steps[i].lon == pair.input_steps[i].lon);
        }
        CHECK(rebuilt.target.lat == pair.target.lat);
        CHECK(rebuilt.origin_lat == pair.origin_lat);
    }
}

TEST_CASE("generate_synthetic: zero noise lies on latent nodes and edges") {
    SynthConfig config;
    config.n_trajectories = 200;
    config.latent_graph_nodes = 20;
    config.noise_sigma = 0.0;
    config.seed = 5;
    auto corpus = generate_synthetic(config);
    REQUIRE(corpus.trajectories.size() == 200);

    for (std::size_t t = 0; t < corpus.trajectories.size(); ++t) {
        const auto& traj = corpus.trajectories[t];
        const auto& path = corpus.node_paths[t];
        REQUIRE(path.size() == traj.size());
        for (std::size_t i = 0; i < traj.size(); ++i) {
            const auto& node = corpus.latent.node_coords[static_cast<std::size_t>(path[i])];
            CHECK(traj.observations[i].lat == node[0]);
            CHECK(traj.observations[i].lon == node[1]);
            if (i > 0) CHECK(corpus.latent.has_edge(path[i - 1], path[i]));
        }
    }
}

TEST_CASE("generate_synthetic: same seed gives byte-identical corpora") {
    SynthConfig config;
    config.n_trajectories = 12;
    config.latent_graph_nodes = 10;
    config.noise_sigma = 0.05;
    config.seed = 8;
    auto a = serialize_hurdat2(generate_synthetic(config).trajectories);
    auto b = serialize_hurdat2(generate_synthetic(config).trajectories);
    CHECK(a == b);

    config.seed = 9;
    auto c = serialize_hurdat2(generate_synthetic(config).trajectories);
    CHECK(a != c);
}

TEST_CASE("generate_synthetic corpora survive the full parse path") {
    SynthConfig config;
    config.n_trajectories = 30;
    config.latent_graph_nodes = 15;
    config.seed = 21;
    auto corpus = generate_synthetic(config);
    std::istringstream in(serialize_hurdat2(corpus.trajectories));
    auto parsed = parse_hurdat2(in);
    CHECK(parsed.trajectories.size() == 30);
    CHECK(parsed.dropped_short == 0);
    for (const auto& traj : parsed.trajectories) {
        for (std::size_t i = 1; i < traj.size(); ++i)
            CHECK(traj.observations[i - 1].time < traj.observations[i].time);
    }
}
