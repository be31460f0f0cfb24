#pragma once

// The (mean, uncertainty) output contract shared by the Bayes oracle, the
// classical baselines, and the transformer.

#include <functional>
#include <vector>

#include "icluq/taskgen.hpp"

namespace icluq {

struct Prediction {
    double y_hat = 0.0;
    double sigma_hat = 1.0;
};

// A sequence predictor maps a prompt sequence to one Prediction per position
// t = 1..T, where the prediction at t may use pairs 1..t-1 and x_t only.
using SequencePredictor = std::function<std::vector<Prediction>(const PromptSequence&)>;

// Per-position loss of the bi-objective task.
inline double nll_loss(const Prediction& p, double y) {
    const double r = y - p.y_hat;
    return std::log(p.sigma_hat) + 0.5 * r * r / (p.sigma_hat * p.sigma_hat);
}

} // namespace icluq
