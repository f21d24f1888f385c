#pragma once

#include <string>
#include <vector>

#include "dualtsr/image.hpp"

namespace dualtsr::metrics {

// Levenshtein edit distance over byte strings.
int edit_distance(const std::string& a, const std::string& b);

// Exact-match accuracy for one pair: 1.0 or 0.0.
double accuracy(const std::string& truth, const std::string& pred);

// Normalized edit distance similarity: 1 - ED / max(|truth|, |pred|).
// Both strings empty counts as a perfect match (1.0).
double ned(const std::string& truth, const std::string& pred);

// Peak signal-to-noise ratio in dB for images in [-1, 1] (peak-to-peak 2).
// Identical images are reported as the cap value 99.0.
inline constexpr double kPsnrCap = 99.0;
double psnr(const ImageGrid& truth, const ImageGrid& pred);

struct Summary {
    double acc = 0.0;
    double ned = 0.0;
    double psnr = 0.0;
    int count = 0;
};

struct RecordResult {
    std::string truth;
    std::string pred;
    double acc = 0.0;
    double ned = 0.0;
    double psnr = 0.0;
};

Summary summarize(const std::vector<RecordResult>& records);

}  // namespace dualtsr::metrics
