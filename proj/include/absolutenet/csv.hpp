#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "absolutenet/ga.hpp"
#include "absolutenet/train.hpp"

namespace absnet {

/// Deterministic float formatting for CSV cells; NaN becomes an empty field.
inline std::string csv_f(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string csv_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline constexpr const char* kEpochCsvHeader =
    "fold,phase,epoch,train_loss,train_acc,val_loss,val_acc";

/// Per-epoch loss table across folds (the select and retrain phases).
inline void write_epoch_csv(const std::string& path, const std::vector<TrainReport>& reports) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("csv: cannot open '" + path + "'");
    os << kEpochCsvHeader << "\n";
    for (std::size_t f = 0; f < reports.size(); ++f)
        for (const auto& e : reports[f].epochs)
            os << f << "," << e.phase << "," << e.epoch << "," << csv_f(e.train_loss) << ","
               << csv_f(e.train_acc) << "," << csv_f(e.val_loss) << "," << csv_f(e.val_acc)
               << "\n";
}

inline constexpr const char* kCvSummaryCsvHeader =
    "fold,accuracy,sensitivity,specificity,tp,fp,tn,fn,selected_epoch,best_val_loss";

/// One row per fold plus an aggregate mean/std pair of rows.
inline void write_cv_summary_csv(const std::string& path, const CvResult& cv) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("csv: cannot open '" + path + "'");
    os << kCvSummaryCsvHeader << "\n";
    for (std::size_t f = 0; f < cv.fold_reports.size(); ++f) {
        const auto& r = cv.fold_reports[f];
        os << f << "," << csv_f(r.test.accuracy) << "," << csv_f(r.test.sensitivity) << ","
           << csv_f(r.test.specificity) << "," << r.test.tp << "," << r.test.fp << ","
           << r.test.tn << "," << r.test.fn << "," << r.selected_epoch << ","
           << csv_f(r.best_val_loss) << "\n";
    }
    os << "mean," << csv_f(cv.accuracy.mean) << "," << csv_f(cv.sensitivity.mean) << ","
       << csv_f(cv.specificity.mean) << ",,,,,,\n";
    os << "std," << csv_f(cv.accuracy.stddev) << "," << csv_f(cv.sensitivity.stddev) << ","
       << csv_f(cv.specificity.stddev) << ",,,,,,\n";
}

/// Table-3-style one-liner: "87.50 +/- 2.88" percentages per metric.
inline std::string cv_summary_line(const CvResult& cv) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "accuracy %.2f +/- %.2f  sensitivity %.2f +/- %.2f  specificity %.2f +/- %.2f",
                  100 * cv.accuracy.mean, 100 * cv.accuracy.stddev, 100 * cv.sensitivity.mean,
                  100 * cv.sensitivity.stddev, 100 * cv.specificity.mean,
                  100 * cv.specificity.stddev);
    return buf;
}

inline constexpr const char* kGaCsvHeader =
    "generation,individual,learning_rate,temporal_kernel,separable_kernel,pool_size,pool_stride,"
    "fitness";

inline void write_ga_csv(const std::string& path, const GaResult& result) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("csv: cannot open '" + path + "'");
    os << kGaCsvHeader << "\n";
    for (const auto& row : result.log)
        os << row.generation << "," << row.individual << "," << csv_g(row.genome.learning_rate)
           << "," << row.genome.temporal_kernel << "," << row.genome.separable_kernel << ","
           << row.genome.pool_size << "," << row.genome.pool_stride << ","
           << csv_g(row.fitness) << "\n";
}

inline constexpr const char* kAblateCsvHeader =
    "variant,trainable_params,accuracy_mean,accuracy_std,sensitivity_mean,sensitivity_std,"
    "specificity_mean,specificity_std";

}  // namespace absnet
