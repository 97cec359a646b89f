#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>

#include "hfl/common.hpp"
#include "hfl/data.hpp"
#include "hfl/nn.hpp"

namespace hfl::metrics {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
};

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    ConfusionCounts counts;
    double threshold = 0.5;
    bool degenerate = false;  // a zero-denominator metric was reported as 0
};

// Predict positive iff prob >= threshold (ties go positive).
inline ConfusionCounts confusion(std::span<const float> probs,
                                 std::span<const std::uint8_t> labels,
                                 double threshold = 0.5) {
    if (probs.size() != labels.size())
        throw ShapeError("confusion: " + std::to_string(probs.size()) + " probs vs " +
                         std::to_string(labels.size()) + " labels");
    ConfusionCounts c;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = static_cast<double>(probs[i]) >= threshold;
        if (pred)
            labels[i] ? ++c.tp : ++c.fp;
        else
            labels[i] ? ++c.fn : ++c.tn;
    }
    return c;
}

inline double f1_score(double precision, double recall) {
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

inline MetricsReport scores(const ConfusionCounts& c, double threshold = 0.5) {
    if (c.total() == 0) throw DataError("scores: zero evaluated samples");
    MetricsReport r;
    r.counts = c;
    r.threshold = threshold;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fp > 0)
        r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    else
        r.degenerate = true;
    if (c.tp + c.fn > 0)
        r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    else
        r.degenerate = true;
    if (r.precision + r.recall > 0.0)
        r.f1 = f1_score(r.precision, r.recall);
    else
        r.degenerate = true;
    return r;
}

inline MetricsReport evaluate(const nn::Model& model, const data::Dataset& ds,
                              double threshold = 0.5, std::size_t chunk = 8192) {
    if (ds.n() == 0) throw DataError("evaluate: empty dataset");
    ConfusionCounts c;
    const std::size_t d = ds.dim();
    for (std::size_t start = 0; start < ds.n(); start += chunk) {
        const std::size_t count = std::min(chunk, ds.n() - start);
        Matrix xb(count, d);
        std::copy_n(ds.features.row(start), count * d, xb.data.begin());
        const auto probs = nn::forward(model, xb);
        const auto part = confusion(
            probs, std::span<const std::uint8_t>(ds.labels.data() + start, count), threshold);
        c.tp += part.tp;
        c.fp += part.fp;
        c.tn += part.tn;
        c.fn += part.fn;
    }
    return scores(c, threshold);
}

}  // namespace hfl::metrics
