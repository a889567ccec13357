#include "reinpp/evalkit.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace reinpp {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (classes != other.classes) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

ConfusionMatrix confusion(const std::vector<std::uint16_t>& pred,
                          const std::vector<std::uint16_t>& gt, std::size_t classes,
                          std::uint16_t ignore_id) {
    if (pred.size() != gt.size()) throw std::invalid_argument("confusion: shape mismatch");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] == ignore_id) continue;
        if (gt[i] >= classes || pred[i] >= classes)
            throw std::invalid_argument("confusion: class id out of range");
        ++cm.at(gt[i], pred[i]);
    }
    return cm;
}

IouReport miou(const ConfusionMatrix& cm) {
    if (cm.classes == 0 || cm.total() == 0) throw std::invalid_argument("miou: empty matrix");
    IouReport rep;
    rep.per_class.assign(cm.classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
        std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (std::size_t j = 0; j < cm.classes; ++j) {
            if (j == k) continue;
            fn += cm.at(k, j);
            fp += cm.at(j, k);
        }
        const std::uint64_t uni = tp + fp + fn;
        if (uni == 0) continue;
        rep.per_class[k] = static_cast<double>(tp) / static_cast<double>(uni);
        sum += rep.per_class[k];
        ++scored;
    }
    if (scored == 0) throw std::invalid_argument("miou: no scorable class");
    rep.mean = sum / static_cast<double>(scored);
    return rep;
}

void write_report(const std::string& csv_path, const std::string& json_path,
                  const ConfusionMatrix& cm) {
    const IouReport rep = miou(cm);

    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "class,iou\n";
    for (std::size_t k = 0; k < rep.per_class.size(); ++k) {
        csv << k << ",";
        if (std::isnan(rep.per_class[k]))
            csv << "absent";
        else
            csv << rep.per_class[k];
        csv << "\n";
    }

    nlohmann::json js;
    js["miou"] = rep.mean;
    js["n_pixels"] = cm.total();
    for (double v : rep.per_class)
        js["per_class"].push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
    std::ofstream jf(json_path);
    if (!jf) throw std::runtime_error("cannot write " + json_path);
    jf << js.dump(2) << "\n";
}

}  // namespace reinpp
