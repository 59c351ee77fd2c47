#include "stormcast/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stormcast {

const std::array<const char*, kWeatherDim> kWeatherNames = {
    "max_wind", "min_pressure", "r34NE", "r34SE", "r34SW", "r34NW",
    "r50NE",    "r50SE",        "r50SW", "r50NW", "r64NE", "r64SE",
    "r64SW",    "r64NW"};

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(trim(cur));
    while (!fields.empty() && fields.back().empty()) fields.pop_back();
    return fields;
}

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError("non-numeric value '" + s + "'", line);
    return v;
}

long parse_long(const std::string& s, std::size_t line) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError("non-numeric value '" + s + "'", line);
    return v;
}

// "28.0N" -> 28.0, "76.1W" -> -76.1
double parse_hemi(const std::string& s, char pos, char neg, std::size_t line) {
    if (s.empty()) throw ParseError("empty coordinate", line);
    char h = s.back();
    std::string num = s;
    double sign = 1.0;
    if (h == pos || h == neg) {
        num = trim(s.substr(0, s.size() - 1));
        if (h == neg) sign = -1.0;
    } else if (std::isalpha(static_cast<unsigned char>(h))) {
        throw ParseError(std::string("unexpected hemisphere '") + h + "' in '" + s + "'", line);
    }
    return sign * parse_double(num, line);
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string format_hemi(double v, char pos, char neg) {
    return format_double(std::abs(v)) + (v < 0 ? neg : pos);
}

}  // namespace

ParseResult parse_hurdat2(std::istream& in) {
    ParseResult result;
    std::string line;
    std::size_t lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;

        auto header = split_csv(line);
        if (header.size() < 3)
            throw ParseError("expected header 'ID, NAME, ROWCOUNT', got '" + trim(line) + "'",
                             lineno);
        Trajectory traj;
        traj.storm_id = header[0];
        traj.name = header[1];
        const std::size_t header_line = lineno;
        long declared = parse_long(header[2], lineno);
        if (declared < 0) throw ParseError("negative row count in header " + traj.storm_id, lineno);

        for (long row = 0; row < declared; ++row) {
            if (!std::getline(in, line))
                throw ParseError("storm " + traj.storm_id + " declares " +
                                     std::to_string(declared) + " rows but file ends after " +
                                     std::to_string(row),
                                 header_line);
            ++lineno;
            auto fields = split_csv(line);
            if (fields.size() < 8 || !all_digits(fields[0]) || fields[0].size() != 8)
                throw ParseError("storm " + traj.storm_id + " declares " +
                                     std::to_string(declared) + " rows but row " +
                                     std::to_string(row + 1) + " is not an observation",
                                 lineno);

            Observation obs;
            obs.time.yyyymmdd = static_cast<std::int32_t>(parse_long(fields[0], lineno));
            obs.time.hhmm = static_cast<std::int32_t>(parse_long(fields[1], lineno));
            // fields[2] = record identifier, fields[3] = system status; not retained
            obs.lat = parse_hemi(fields[4], 'N', 'S', lineno);
            obs.lon = parse_hemi(fields[5], 'E', 'W', lineno);
            if (obs.lat < -90.0 || obs.lat > 90.0 || obs.lon < -180.0 || obs.lon > 180.0)
                throw ParseError("coordinate out of range", lineno);

            for (int f = 0; f < kWeatherDim; ++f) {
                std::size_t col = 6 + static_cast<std::size_t>(f);
                if (col >= fields.size() || fields[col].empty()) {
                    obs.missing[f] = true;
                    continue;
                }
                double v = parse_double(fields[col], lineno);
                double sentinel = (f == 0) ? -99.0 : -999.0;
                if (v == sentinel || v == -999.0) {
                    obs.missing[f] = true;
                } else {
                    obs.weather[f] = v;
                }
            }

            if (!traj.observations.empty() && !(traj.observations.back().time < obs.time))
                throw ParseError("timestamps not strictly increasing in storm " + traj.storm_id,
                                 lineno);
            traj.observations.push_back(obs);
        }

        if (traj.observations.size() < 2) {
            ++result.dropped_short;
        } else {
            result.trajectories.push_back(std::move(traj));
        }
    }
    return result;
}

ParseResult parse_hurdat2_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    return parse_hurdat2(in);
}

void serialize_hurdat2(const std::vector<Trajectory>& trajectories, std::ostream& out) {
    char buf[16];
    for (const auto& traj : trajectories) {
        out << traj.storm_id << ", " << traj.name << ", " << traj.observations.size() << ",\n";
        for (const auto& obs : traj.observations) {
            std::snprintf(buf, sizeof buf, "%08d, %04d", obs.time.yyyymmdd, obs.time.hhmm);
            out << buf << ",  , XX, " << format_hemi(obs.lat, 'N', 'S') << ", "
                << format_hemi(obs.lon, 'E', 'W');
            for (int f = 0; f < kWeatherDim; ++f) {
                if (obs.missing[f]) {
                    out << ", " << (f == 0 ? "-99" : "-999");
                } else {
                    out << ", " << format_double(obs.weather[f]);
                }
            }
            out << ",\n";
        }
    }
}

std::string serialize_hurdat2(const std::vector<Trajectory>& trajectories) {
    std::ostringstream out;
    serialize_hurdat2(trajectories, out);
    return out.str();
}

namespace {

// Nearest-rank quantile over sorted values.
double quantile(const std::vector<double>& sorted, double p) {
    std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (rank == 0) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
}

// Largest-remainder apportionment of n into three parts. Floors first, then
// the remainder goes to the largest fractional parts (ties: train, val, test).
std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios) {
    std::array<double, 3> exact = {ratios.train * static_cast<double>(n),
                                   ratios.val * static_cast<double>(n),
                                   ratios.test * static_cast<double>(n)};
    std::array<std::size_t, 3> counts;
    std::array<double, 3> frac;
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        counts[i] = static_cast<std::size_t>(std::floor(exact[i] + 1e-9));
        frac[i] = exact[i] - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t r = 0; assigned < n; ++r) {
        counts[order[r % 3]] += 1;
        ++assigned;
    }
    return counts;
}

}  // namespace

Strata stratify_by_length(const std::vector<Trajectory>& trajectories, std::size_t min_group) {
    std::vector<double> lengths;
    lengths.reserve(trajectories.size());
    for (const auto& t : trajectories) lengths.push_back(static_cast<double>(t.size()));
    std::vector<double> sorted = lengths;
    std::sort(sorted.begin(), sorted.end());

    Strata out;
    out.boundaries = {quantile(sorted, 0.25), quantile(sorted, 0.5), quantile(sorted, 0.75)};

    // Stratum of a trajectory = number of boundaries its length exceeds.
    std::array<std::vector<std::size_t>, 4> strata;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        int s = 0;
        for (double q : out.boundaries)
            if (lengths[i] > q) ++s;
        strata[static_cast<std::size_t>(s)].push_back(i);
    }
    for (auto& s : strata)
        if (!s.empty()) out.groups.push_back(std::move(s));

    auto& groups = out.groups;
    for (std::size_t g = 0; g < groups.size() && groups.size() > 1;) {
        if (groups[g].size() < min_group) {
            std::size_t into = (g == 0) ? 1 : g - 1;
            out.warnings.push_back("stratum with " + std::to_string(groups[g].size()) +
                                   " trajectories merged into neighbor");
            auto& dst = groups[into];
            dst.insert(dst.end(), groups[g].begin(), groups[g].end());
            std::sort(dst.begin(), dst.end());
            groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(g));
            g = 0;
        } else {
            ++g;
        }
    }
    return out;
}

SplitSet stratified_split(const std::vector<Trajectory>& trajectories, SplitRatios ratios,
                          std::uint64_t seed) {
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    if (trajectories.size() < 10)
        throw std::invalid_argument("stratified_split needs at least 10 trajectories");

    Strata strata = stratify_by_length(trajectories, 3);

    SplitSet out;
    out.seed = seed;
    out.strata_boundaries = strata.boundaries;
    out.warnings = strata.warnings;

    Rng rng(seed);
    for (auto& group : strata.groups) {
        rng_shuffle(rng, group);
        auto counts = apportion(group.size(), ratios);
        std::size_t i = 0;
        for (std::size_t k = 0; k < counts[0]; ++k) out.train.push_back(trajectories[group[i++]]);
        for (std::size_t k = 0; k < counts[1]; ++k) out.val.push_back(trajectories[group[i++]]);
        for (std::size_t k = 0; k < counts[2]; ++k) out.test.push_back(trajectories[group[i++]]);
    }
    return out;
}

std::string split_manifest_to_json(const SplitSet& split) {
    nlohmann::json j;
    j["seed"] = split.seed;
    j["strata_boundaries"] = split.strata_boundaries;
    j["warnings"] = split.warnings;
    auto ids = [](const std::vector<Trajectory>& trajs) {
        std::vector<std::string> out;
        out.reserve(trajs.size());
        for (const auto& t : trajs) out.push_back(t.storm_id);
        return out;
    };
    j["splits"] = {{"train", ids(split.train)}, {"val", ids(split.val)}, {"test", ids(split.test)}};
    return j.dump(2);
}

SplitSet split_from_manifest(const std::vector<Trajectory>& corpus,
                             const std::string& manifest_json) {
    auto j = nlohmann::json::parse(manifest_json);
    std::map<std::string, const Trajectory*> by_id;
    for (const auto& t : corpus) by_id[t.storm_id] = &t;

    SplitSet split;
    split.seed = j.at("seed").get<std::uint64_t>();
    split.strata_boundaries = j.at("strata_boundaries").get<std::vector<double>>();
    if (j.contains("warnings")) split.warnings = j.at("warnings").get<std::vector<std::string>>();

    auto fill = [&](const char* key, std::vector<Trajectory>& out) {
        for (const auto& id : j.at("splits").at(key)) {
            auto it = by_id.find(id.get<std::string>());
            if (it == by_id.end())
                throw std::runtime_error("manifest references storm " + id.get<std::string>() +
                                         " absent from the corpus");
            out.push_back(*it->second);
        }
    };
    fill("train", split.train);
    fill("val", split.val);
    fill("test", split.test);
    return split;
}

ExamplePair make_pair(const Trajectory& traj, std::size_t target_index) {
    if (target_index < 1 || target_index >= traj.size())
        throw std::invalid_argument("target index out of range for " + traj.storm_id);
    ExamplePair pair;
    std::size_t begin =
        target_index > static_cast<std::size_t>(kMaxInputSteps) ? target_index - kMaxInputSteps : 0;
    pair.input_steps.assign(traj.observations.begin() + static_cast<std::ptrdiff_t>(begin),
                            traj.observations.begin() + static_cast<std::ptrdiff_t>(target_index));
    pair.target = traj.observations[target_index];
    pair.origin_lat = pair.input_steps.front().lat;
    pair.origin_lon = pair.input_steps.front().lon;
    pair.source_id = traj.storm_id + ":" + std::to_string(target_index);
    return pair;
}

std::vector<ExamplePair> sample_pairs(const std::vector<Trajectory>& trajectories,
                                      int pairs_per_trajectory, std::uint64_t seed) {
    if (pairs_per_trajectory < 1)
        throw std::invalid_argument("pairs_per_trajectory must be >= 1");
    Rng rng(seed);
    std::vector<ExamplePair> pairs;
    for (const auto& traj : trajectories) {
        if (traj.size() < 2) continue;
        std::size_t n_targets = traj.size() - 1;
        auto picks =
            rng_sample_indices(rng, n_targets, static_cast<std::size_t>(pairs_per_trajectory));
        for (std::size_t p : picks) pairs.push_back(make_pair(traj, p + 1));
    }
    return pairs;
}

bool LatentGraph::has_edge(int src, int dst) const {
    return std::any_of(edges.begin(), edges.end(),
                       [&](const LatentEdge& e) { return e.src == src && e.dst == dst; });
}

namespace {

Timestamp step_timestamp(int traj_index, int step) {
    using namespace std::chrono;
    sys_days start = sys_days(year{2000} / January / day{1}) + days(traj_index % 3650);
    auto tp = start + hours(6 * step);
    auto dp = floor<days>(tp);
    year_month_day ymd(dp);
    Timestamp ts;
    ts.yyyymmdd = static_cast<int>(ymd.year()) * 10000 +
                  static_cast<int>(unsigned(ymd.month())) * 100 +
                  static_cast<int>(unsigned(ymd.day()));
    ts.hhmm = static_cast<std::int32_t>(duration_cast<hours>(tp - dp).count()) * 100;
    return ts;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SynthConfig& config) {
    if (config.n_trajectories < 1) throw std::invalid_argument("n_trajectories must be >= 1");
    if (config.latent_graph_nodes < 4) throw std::invalid_argument("need >= 4 latent nodes");
    if (config.min_length < 2 || config.max_length < config.min_length)
        throw std::invalid_argument("bad trajectory length range");

    Rng rng(config.seed);
    SyntheticCorpus corpus;

    // Latent nodes fill a regular half-degree lattice (exact dyadic
    // coordinates, so a zero-noise walk quantizes losslessly). The regular
    // spacing matters: every hop is one lattice step, so a trajectory's
    // local-frame shape repeats across the grid and cannot identify the
    // node; only the graph knows which neighbors a node actually feeds.
    const int n = config.latent_graph_nodes;
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const int rows = (n + side - 1) / side;
    std::vector<std::pair<int, int>> slots;
    for (int a = 0; a < rows; ++a)
        for (int b = 0; b < side; ++b) slots.push_back({a, b});
    rng_shuffle(rng, slots);
    slots.resize(static_cast<std::size_t>(n));

    std::map<std::pair<int, int>, int> slot_index;
    for (int i = 0; i < n; ++i) {
        auto [a, b] = slots[static_cast<std::size_t>(i)];
        slot_index[{a, b}] = i;
        corpus.latent.node_coords.push_back({20.0 + 0.5 * a, -70.0 + 0.5 * b});
    }
    const auto& coords = corpus.latent.node_coords;

    // 2-3 outgoing edges per node toward lattice neighbors, one strongly
    // dominant. Which neighbor dominates is idiosyncratic per node.
    std::vector<std::vector<std::pair<int, double>>> out_edges(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto [a, b] = slots[static_cast<std::size_t>(i)];
        std::vector<int> peers;
        for (auto [da, db] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
            auto it = slot_index.find({a + da, b + db});
            if (it != slot_index.end()) peers.push_back(it->second);
        }
        if (peers.empty()) {
            // stranded cell: link to the nearest other node so walks never stall
            int best = -1;
            double best_d2 = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double dlat = coords[static_cast<std::size_t>(j)][0] -
                              coords[static_cast<std::size_t>(i)][0];
                double dlon = coords[static_cast<std::size_t>(j)][1] -
                              coords[static_cast<std::size_t>(i)][1];
                double d2 = dlat * dlat + dlon * dlon;
                if (best < 0 || d2 < best_d2) {
                    best = j;
                    best_d2 = d2;
                }
            }
            peers.push_back(best);
        }
        rng_shuffle(rng, peers);
        std::size_t deg = std::min<std::size_t>(2 + rng_below(rng, 2), peers.size());
        for (std::size_t d = 0; d < deg; ++d) {
            double w = d == 0 ? rng_uniform(rng, 2.5, 3.5) : rng_uniform(rng, 0.2, 0.5);
            out_edges[static_cast<std::size_t>(i)].push_back({peers[d], w});
            corpus.latent.edges.push_back({i, peers[d], w});
        }
    }

    for (int t = 0; t < config.n_trajectories; ++t) {
        int span = config.max_length - config.min_length + 1;
        int length = config.min_length + static_cast<int>(rng_below(rng, span));
        int node = static_cast<int>(rng_below(rng, n));

        Trajectory traj;
        int number = t % 99 + 1;
        int year = 2000 + t / 99;
        char id[16];
        std::snprintf(id, sizeof id, "SY%02d%04d", number, year);
        traj.storm_id = id;
        traj.name = "SYNTH" + std::to_string(t);

        std::vector<int> path;
        for (int step = 0; step < length; ++step) {
            path.push_back(node);
            Observation obs;
            obs.time = step_timestamp(t, step);
            obs.lat = coords[static_cast<std::size_t>(node)][0];
            obs.lon = coords[static_cast<std::size_t>(node)][1];
            if (config.noise_sigma > 0.0) {
                obs.lat += rng_normal(rng, 0.0, config.noise_sigma);
                obs.lon += rng_normal(rng, 0.0, config.noise_sigma);
            }

            // Weather follows a storm-lifecycle ramp plus noise, deliberately
            // carrying no information about the latent node. Radii for wind
            // bands the storm does not reach are flagged missing, which keeps
            // the missing-value path exercised end to end.
            double wind = std::min(95.0, 35.0 + 1.8 * step + std::floor(rng_uniform(rng, 0.0, 6.0)));
            obs.weather[0] = wind;
            obs.weather[1] = 1012.0 - (wind - 35.0);
            for (int band = 0; band < 3; ++band) {
                double threshold = band == 0 ? 34.0 : band == 1 ? 50.0 : 64.0;
                for (int quad = 0; quad < 4; ++quad) {
                    int f = 2 + band * 4 + quad;
                    if (wind < threshold) {
                        obs.missing[static_cast<std::size_t>(f)] = true;
                    } else {
                        obs.weather[static_cast<std::size_t>(f)] =
                            std::floor((wind - threshold) * 3.0) + 5.0 * quad;
                    }
                }
            }
            traj.observations.push_back(obs);

            const auto& outs = out_edges[static_cast<std::size_t>(node)];
            double total = 0.0;
            for (const auto& [dst, w] : outs) total += w;
            double r = rng_unit(rng) * total;
            double c = 0.0;
            int next = outs.back().first;
            for (const auto& [dst, w] : outs) {
                c += w;
                if (r < c) {
                    next = dst;
                    break;
                }
            }
            node = next;
        }
        corpus.node_paths.push_back(std::move(path));
        corpus.trajectories.push_back(std::move(traj));
    }
    return corpus;
}

}  // namespace stormcast
