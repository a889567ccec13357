#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace reinpp {

// Rows are ground truth, columns are prediction; ignore pixels excluded.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;  // K*K row-major

    explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k * k, 0) {}
    std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts[gt * classes + pred]; }
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * classes + pred]; }
    std::uint64_t total() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const std::vector<std::uint16_t>& pred,
                          const std::vector<std::uint16_t>& gt, std::size_t classes,
                          std::uint16_t ignore_id = 255);

// Classes absent from both prediction and ground truth carry NaN IoU and are
// excluded from the mean.
struct IouReport {
    std::vector<double> per_class;
    double mean = 0.0;
};
IouReport miou(const ConfusionMatrix& cm);

// CSV with one per-class row plus a JSON summary line.
void write_report(const std::string& csv_path, const std::string& json_path,
                  const ConfusionMatrix& cm);

}  // namespace reinpp
