#pragma once

// Central finite-difference checks of the autodiff ops and the model forward
// paths on small random instances.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seqmask/nn.hpp"
#include "seqmask/tensor.hpp"

namespace seqmask {

struct GradCheckOptions {
    std::size_t instances = 100;
    std::uint64_t seed = 1;
    double step = 1e-5;
    double tolerance = 1e-4;
};

struct GradCheckResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t passed = 0;
    double max_rel_error = 0.0;

    bool ok() const { return instances > 0 && passed == instances; }
};

// ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12)
// over every element of every input. `f` must map the inputs to a scalar.
double gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs,
                      double step);

// Names of every registered check, in run order.
std::vector<std::string> gradcheck_names();
std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& options,
                                            const std::vector<std::string>& only = {});

}  // namespace seqmask
