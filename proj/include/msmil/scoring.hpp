#pragma once

#include <span>

#include "msmil/model.hpp"
#include "msmil/numerics.hpp"

namespace msmil {

/// Mean of per-slice sigmoid probabilities. Throws ValueError when empty.
double slice_average_score(std::span<const double> slice_logits);

/// Scan probability from a slice classifier: every slice's COVID-vs-rest
/// logit (logit[1] - logit[0]) goes through slice_average_score.
double slice_model_score(const SliceModel& model, const Matrix& slices);

/// COVID softmax probability of the MIL model on the K-slice uniform subset.
double mil_score(const MilModel& model, const Matrix& slices, std::size_t k_eval);

/// Test-time view fusion for scalar probability outputs: arithmetic mean.
double average_views(std::span<const double> view_probabilities);

/// Test-time view fusion for 2-class logits: mean logits, then softmax;
/// returns the COVID probability.
double average_views(std::span<const Vector> view_logits);

}  // namespace msmil
