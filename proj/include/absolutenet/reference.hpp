#pragma once

#include <cstdint>
#include <vector>

#include "absolutenet/model.hpp"

namespace absnet {

/// Published layer table for the stock dual-modality network (28 channels x
/// 150 samples). `verify-arch` checks a freshly built model against these
/// rows cell by cell.
inline const std::vector<LayerReportRow>& stock_reference_rows() {
    static const std::vector<LayerReportRow> rows = {
        {"Input", "Input", {28, 150, 1}, 0},
        {"Spatial-Temporal", "Spatial Conv2D", {1, 150, 40}, 1120},
        {"Spatial-Temporal", "Layer Normalization", {1, 150, 40}, 80},
        {"Spatial-Temporal", "Squared Activation", {1, 150, 40}, 0},
        {"Spatial-Temporal", "Temporal Conv2D", {1, 146, 60}, 12000},
        {"Spatial-Temporal", "Layer Normalization", {1, 146, 60}, 120},
        {"Spatial-Temporal", "Absolute Activation", {1, 146, 60}, 0},
        {"Temporal-Spatial", "Temporal Conv2D", {28, 146, 20}, 100},
        {"Temporal-Spatial", "Layer Normalization", {28, 146, 20}, 40},
        {"Temporal-Spatial", "Squared Activation", {28, 146, 20}, 0},
        {"Temporal-Spatial", "Spatial Conv2D", {1, 146, 60}, 33600},
        {"Temporal-Spatial", "Layer Normalization", {1, 146, 60}, 120},
        {"Temporal-Spatial", "Absolute Activation", {1, 146, 60}, 0},
        {"Concatenation", "Concatenation", {1, 146, 120}, 0},
        {"Concatenation", "Batch Normalization", {1, 146, 120}, 480},
        {"Fusion Block 1", "Separable Conv2D", {1, 146, 10}, 1560},
        {"Fusion Block 1", "Layer Normalization", {1, 146, 10}, 20},
        {"Fusion Block 1", "Absolute Activation", {1, 146, 10}, 0},
        {"Fusion Block 2", "Average Pooling 2D", {1, 16, 10}, 0},
        {"Fusion Block 2", "Logarithmic Activation", {1, 16, 10}, 0},
        {"Fusion Block 2", "Dropout (30%)", {1, 16, 10}, 0},
        {"Classification Head", "Dense (Absolute Activation)", {1, 16, 2}, 22},
        {"Classification Head", "Flatten", {32}, 0},
        {"Classification Head", "Dense (Softmax)", {2}, 66},
    };
    return rows;
}

inline constexpr std::int64_t kStockTrainableParams = 49088;
inline constexpr std::int64_t kStockTotalParams = 49328;

struct ReferenceDiff {
    std::size_t row;
    std::string expected;
    std::string actual;
};

/// Cell-by-cell comparison of a report against the stock reference; empty
/// result means an exact match including both totals.
inline std::vector<ReferenceDiff> diff_against_reference(const LayerReport& rep) {
    std::vector<ReferenceDiff> diffs;
    const auto& ref = stock_reference_rows();
    auto cell = [](const LayerReportRow& r) {
        return r.layer + " " + shape_str(r.output) + " " + std::to_string(r.params);
    };
    const std::size_t n = std::max(ref.size(), rep.rows.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::string want = i < ref.size() ? cell(ref[i]) : "<absent>";
        const std::string got = i < rep.rows.size() ? cell(rep.rows[i]) : "<absent>";
        if (want != got) diffs.push_back({i, want, got});
    }
    if (rep.trainable != kStockTrainableParams)
        diffs.push_back({n, "trainable " + std::to_string(kStockTrainableParams),
                         "trainable " + std::to_string(rep.trainable)});
    if (rep.total != kStockTotalParams)
        diffs.push_back({n + 1, "total " + std::to_string(kStockTotalParams),
                         "total " + std::to_string(rep.total)});
    return diffs;
}

}  // namespace absnet
