#include "msmil/scoring.hpp"

#include "msmil/data.hpp"
#include "msmil/error.hpp"
#include "msmil/mil.hpp"

namespace msmil {

double slice_average_score(std::span<const double> slice_logits) {
    if (slice_logits.empty()) throw ValueError("slice_average_score: no slices");
    double total = 0.0;
    for (double l : slice_logits) total += sigmoid(l);
    return total / static_cast<double>(slice_logits.size());
}

double slice_model_score(const SliceModel& model, const Matrix& slices) {
    Vector margins(slices.rows());
    for (std::size_t i = 0; i < slices.rows(); ++i) {
        const Vector logits = slice_logits(model, slices.row(i));
        margins[i] = logits[1] - logits[0];
    }
    return slice_average_score(margins);
}

double mil_score(const MilModel& model, const Matrix& slices, std::size_t k_eval) {
    const auto out = forward(model, uniform_subsample(slices, k_eval), Mode::eval);
    return softmax(out.logits)[1];
}

double average_views(std::span<const double> view_probabilities) {
    if (view_probabilities.empty()) throw ValueError("average_views: no views");
    double total = 0.0;
    for (double p : view_probabilities) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValueError("average_views: probability outside [0, 1]");
        total += p;
    }
    return total / static_cast<double>(view_probabilities.size());
}

double average_views(std::span<const Vector> view_logits) {
    if (view_logits.empty()) throw ValueError("average_views: no views");
    Vector mean(2, 0.0);
    for (const auto& v : view_logits) {
        if (v.size() != 2) throw ShapeError("average_views: expected 2 logits per view");
        axpy(1.0, v, mean);
    }
    for (double& m : mean) m /= static_cast<double>(view_logits.size());
    return softmax(mean)[1];
}

}  // namespace msmil
