#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stormcast/autodiff.hpp"
#include "stormcast/nets.hpp"

namespace stormcast {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

// Central finite differences against tape gradients for every differentiable
// op and for the full tiny models (both variants) on a synthetic batch.
std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed);

// Loss closure for a full model on a fixed batch; used by the suite and by
// tests that probe end-to-end gradients directly.
ModelClosure model_loss_closure(const ModelConfig& config, std::uint64_t data_seed);

}  // namespace stormcast
