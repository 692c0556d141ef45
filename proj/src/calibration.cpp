#include "feddes/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "feddes/errors.hpp"
#include "feddes/kernels.hpp"

namespace feddes {

double nll_at_temperature(const Matrix& logits, const std::vector<std::size_t>& labels, double t) {
    if (logits.rows() != labels.size() || labels.empty())
        throw ValidationError("nll_at_temperature: logits/labels mismatch or empty");
    if (t <= 0.0) throw ValidationError("nll_at_temperature: temperature must be positive");
    Matrix scaled(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled.raw()[i] = logits.raw()[i] / t;
    double total = 0.0;
    for (std::size_t i = 0; i < scaled.rows(); ++i)
        total += logsumexp_row(scaled, i) - scaled(i, labels[i]);
    return total / static_cast<double>(labels.size());
}

CalibrationResult calibrate_temperature(const Matrix& val_logits,
                                        const std::vector<std::size_t>& val_labels,
                                        const std::vector<std::size_t>& known_classes) {
    if (val_logits.rows() != val_labels.size())
        throw ValidationError("calibrate_temperature: logits/labels mismatch");

    std::set<std::size_t> known(known_classes.begin(), known_classes.end());
    std::set<std::size_t> usable;
    for (std::size_t y : val_labels)
        if (known.empty() || known.count(y)) usable.insert(y);
    if (val_labels.empty() || usable.size() < 2) {
        CalibrationResult r;
        r.temperature = 1.0;
        r.degenerate_warning = true;
        r.nll = val_labels.empty() ? 0.0 : nll_at_temperature(val_logits, val_labels, 1.0);
        return r;
    }

    // golden-section on u = log T
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(0.05), b = std::log(20.0);
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = nll_at_temperature(val_logits, val_labels, std::exp(c));
    double fd = nll_at_temperature(val_logits, val_labels, std::exp(d));
    while (b - a > 1e-3) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll_at_temperature(val_logits, val_labels, std::exp(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll_at_temperature(val_logits, val_labels, std::exp(d));
        }
    }
    CalibrationResult r;
    r.temperature = std::exp(0.5 * (a + b));
    r.nll = nll_at_temperature(val_logits, val_labels, r.temperature);
    return r;
}

} // namespace feddes
