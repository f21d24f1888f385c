#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "dualtsr/metrics.hpp"
#include "dualtsr/model.hpp"

namespace dualtsr::evaluate {

struct EvalResult {
    std::vector<metrics::RecordResult> records;
    metrics::Summary summary;
};

// Runs seeded joint inference for every manifest record (paths resolved
// relative to the manifest) and scores the text branch (ACC, NED) and the
// image branch (PSNR) against ground truth.
EvalResult run(const std::string& manifest_path, const model::Model<float>& m,
               int steps, double w, std::uint64_t seed);

// Line-delimited report: id, prediction, ground_truth, ned, psnr,
// exact_match; one summary footer row. Stable column order.
void write_report(const EvalResult& result, std::ostream& out);

}  // namespace dualtsr::evaluate
