// SPDX-License-Identifier: Apache-2.0
//
// Run-length encoding of binary masks. Runs are taken in row-major order and
// alternate zeros/ones, starting with a (possibly empty) run of zeros.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hisam/mask.hpp"

namespace hisam {

struct Rle {
    int width = 0;
    int height = 0;
    std::vector<int64_t> counts;

    bool operator==(const Rle&) const = default;
};

Rle rle_encode(const BinaryMask& mask);
/// Throws ValidationError when the runs do not cover width * height pixels.
BinaryMask rle_decode(const Rle& rle);

/// Space-separated run lengths, e.g. "3 2 5".
std::string rle_counts_string(const Rle& rle);
Rle rle_from_string(const std::string& counts, int width, int height);

/// {"size": [height, width], "counts": "..."}
nlohmann::ordered_json rle_to_json(const Rle& rle);
Rle rle_from_json(const nlohmann::ordered_json& j);

} // namespace hisam
