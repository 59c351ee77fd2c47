#include "stormcast/verify.hpp"

#include <cmath>
#include <memory>

#include "stormcast/corpus.hpp"
#include "stormcast/featurize.hpp"
#include "stormcast/geograph.hpp"
#include "stormcast/rng.hpp"

namespace stormcast {

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng_uniform(rng, lo, hi);
    return t;
}

// Weighted reduction to a scalar; the random weights make the finite
// difference sensitive to misplaced elements, which plain mean() is not.
Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
    Var prod = mul(x, tape.constant(weights));
    return scale(reduce_mean(prod), static_cast<double>(weights.numel()));
}

using BuildFn = std::function<double(Tape&, const std::map<std::string, Var>&, ParamMap*)>;

ModelClosure wrap(BuildFn build) {
    return [build](const ParamMap& params, ParamMap* grads_out) {
        Tape tape;
        std::map<std::string, Var> vars;
        for (const auto& [name, tensor] : params)
            vars[name] = tape.leaf(tensor, grads_out != nullptr);
        return build(tape, vars, grads_out);
    };
}

double finish(Tape& tape, Var loss, const std::map<std::string, Var>& vars, ParamMap* grads_out) {
    double value = loss.value().item();
    if (grads_out) {
        tape.backward(loss);
        for (const auto& [name, var] : vars)
            (*grads_out)[name] =
                var.grad().data.empty() ? Tensor::zeros(var.value().shape) : var.grad();
    }
    return value;
}

struct OpCheck {
    std::string name;
    double threshold;
    ParamMap params;
    ModelClosure closure;
};

std::vector<OpCheck> op_checks(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<OpCheck> checks;

    {
        Tensor x = rand_tensor({3, 4}, rng);
        Tensor w = rand_tensor({4, 2}, rng);
        Tensor c = rand_tensor({3, 2}, rng);
        checks.push_back(
            {"matmul_2d", 1e-6, {{"x", x}, {"w", w}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, matmul(v.at("x"), v.at("w")), c), v, g);
             })});
    }
    {
        Tensor a = rand_tensor({2, 3, 4}, rng);
        Tensor b = rand_tensor({2, 4, 2}, rng);
        Tensor c = rand_tensor({2, 3, 2}, rng);
        checks.push_back(
            {"matmul_batched", 1e-5, {{"a", a}, {"b", b}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, matmul(v.at("a"), v.at("b")), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({5, 7}, rng);
        Tensor b = rand_tensor({7}, rng);
        Tensor c = rand_tensor({5, 7}, rng);
        checks.push_back(
            {"add_broadcast", 1e-5, {{"x", x}, {"b", b}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, add(v.at("x"), v.at("b")), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({4, 6}, rng);
        Tensor y = rand_tensor({4, 6}, rng);
        Tensor c = rand_tensor({4, 6}, rng);
        checks.push_back(
            {"mul", 1e-5, {{"x", x}, {"y", y}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, mul(v.at("x"), v.at("y")), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({5, 5}, rng);
        for (double& v : x.data)
            if (std::abs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;  // keep off the kink
        Tensor c = rand_tensor({5, 5}, rng);
        checks.push_back({"relu", 1e-5, {{"x", x}},
                          wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                              return finish(t, weighted_sum(t, relu(v.at("x")), c), v, g);
                          })});
    }
    {
        Tensor x = rand_tensor({6, 5}, rng, -2.0, 2.0);
        Tensor c = rand_tensor({6, 5}, rng);
        checks.push_back(
            {"softmax", 1e-5, {{"x", x}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, softmax_lastdim(v.at("x")), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({8, 6}, rng);
        Tensor gain = rand_tensor({6}, rng, 0.5, 1.5);
        Tensor bias = rand_tensor({6}, rng);
        Tensor c = rand_tensor({8, 6}, rng);
        checks.push_back(
            {"layer_norm", 1e-6, {{"x", x}, {"gain", gain}, {"bias", bias}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 Var out = layer_norm(v.at("x"), v.at("gain"), v.at("bias"));
                 return finish(t, weighted_sum(t, out, c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({3, 4}, rng);
        Tensor y = rand_tensor({3, 2}, rng);
        Tensor c = rand_tensor({3, 6}, rng);
        checks.push_back(
            {"concat_last", 1e-5, {{"x", x}, {"y", y}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, concat_last({v.at("x"), v.at("y")}), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({2, 5}, rng);
        Tensor y = rand_tensor({3, 5}, rng);
        Tensor c = rand_tensor({5, 5}, rng);
        checks.push_back(
            {"concat_rows", 1e-5, {{"x", x}, {"y", y}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, concat_rows({v.at("x"), v.at("y")}), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({2, 3, 4}, rng);
        Tensor c = rand_tensor({2, 4, 3}, rng);
        checks.push_back(
            {"transpose_last2", 1e-5, {{"x", x}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, transpose_last2(v.at("x")), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({4, 4}, rng);
        Tensor mask = Tensor::zeros({4, 4});
        for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = (i % 3 == 0) ? 1.0 : 0.0;
        Tensor c = rand_tensor({4, 4}, rng);
        checks.push_back(
            {"masked_fill", 1e-5, {{"x", x}},
             wrap([c, mask](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, masked_fill(v.at("x"), mask, -5.0), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({4, 8}, rng);
        Tensor c = rand_tensor({4, 3}, rng);
        checks.push_back(
            {"narrow_last", 1e-5, {{"x", x}},
             wrap([c](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, narrow_last(v.at("x"), 2, 3), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({6, 4}, rng);
        Tensor c = rand_tensor({4, 4}, rng);
        std::vector<int> rows = {1, 3, 3, 5};  // repeated row exercises accumulation
        checks.push_back(
            {"take_rows", 1e-5, {{"x", x}},
             wrap([c, rows](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, weighted_sum(t, take_rows(v.at("x"), rows), c), v, g);
             })});
    }
    {
        Tensor x = rand_tensor({3, 7}, rng);
        checks.push_back({"reduce_mean", 1e-5, {{"x", x}},
                          wrap([](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                              return finish(t, reduce_mean(v.at("x")), v, g);
                          })});
    }
    {
        Tensor pred = rand_tensor({4, 2}, rng, -2.0, 2.0);
        Tensor target = pred;
        // offsets straddle the quadratic/linear transition without sitting on it
        const double offsets[] = {0.4, -0.4, 1.6, -1.6, 0.2, -1.8, 1.3, -0.7};
        for (std::size_t i = 0; i < target.data.size(); ++i) target.data[i] -= offsets[i];
        checks.push_back(
            {"smooth_l1", 1e-5, {{"pred", pred}},
             wrap([target](Tape& t, const std::map<std::string, Var>& v, ParamMap* g) {
                 return finish(t, smooth_l1(v.at("pred"), target, 1.0), v, g);
             })});
    }
    return checks;
}

}  // namespace

ModelClosure model_loss_closure(const ModelConfig& config, std::uint64_t data_seed) {
    SynthConfig sc;
    sc.n_trajectories = 6;
    sc.latent_graph_nodes = 12;
    sc.noise_sigma = 0.05;
    sc.min_length = 4;
    sc.max_length = 10;
    sc.seed = data_seed;
    auto corpus = generate_synthetic(sc);

    auto graph = std::make_shared<SpatialGraph>(build_graph(corpus.trajectories));
    auto pairs = sample_pairs(corpus.trajectories, 2, data_seed);
    Scaler scaler = fit_scaler(pairs);

    auto inputs = std::make_shared<std::vector<ModelInput>>();
    for (std::size_t i = 0; i < pairs.size() && i < 4; ++i)
        inputs->push_back(assemble(pairs[i], *graph, scaler, 1, 8));

    auto targets = std::make_shared<Tensor>(Tensor::zeros({static_cast<int>(inputs->size()), 2}));
    for (std::size_t i = 0; i < inputs->size(); ++i) {
        targets->data[i * 2] = (*inputs)[i].target_local[0];
        targets->data[i * 2 + 1] = (*inputs)[i].target_local[1];
    }

    ModelConfig cfg = config;
    return [cfg, inputs, targets, graph](const ParamMap& params, ParamMap* grads_out) {
        Tape tape;
        std::map<std::string, Var> vars;
        for (const auto& [name, tensor] : params)
            vars[name] = tape.leaf(tensor, grads_out != nullptr);

        std::vector<const ModelInput*> batch;
        for (const auto& input : *inputs) batch.push_back(&input);
        Var pred = forward(tape, batch, vars, cfg, ForwardOptions{});
        Var loss = smooth_l1(pred, *targets);
        return finish(tape, loss, vars, grads_out);
    };
}

std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed) {
    std::vector<CheckResult> results;

    for (auto& check : op_checks(seed)) {
        auto report = grad_check(check.closure, check.params, 1e-5, 50, seed);
        CheckResult r;
        r.name = check.name;
        r.max_rel_err = report.max_rel_err;
        r.threshold = check.threshold;
        r.passed = report.max_rel_err < check.threshold;
        results.push_back(r);
    }

    for (Variant variant : {Variant::graph_transformer, Variant::vanilla_transformer}) {
        ModelConfig config = ModelConfig::tiny(variant);
        auto closure = model_loss_closure(config, seed + 17);
        Parameters params = init_params(config, seed + 29);
        auto report = grad_check(closure, params, 1e-5, 50, seed);
        CheckResult r;
        r.name = std::string("model_tiny_") +
                 (variant == Variant::graph_transformer ? "graph" : "vanilla");
        r.max_rel_err = report.max_rel_err;
        r.threshold = 1e-4;
        r.passed = report.max_rel_err < r.threshold;
        results.push_back(r);
    }
    return results;
}

}  // namespace stormcast
