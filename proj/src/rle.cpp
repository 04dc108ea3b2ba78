// SPDX-License-Identifier: Apache-2.0
#include "hisam/rle.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "hisam/errors.hpp"

namespace hisam {

Rle rle_encode(const BinaryMask& mask)
{
    Rle rle{mask.width(), mask.height(), {}};
    uint8_t current = 0;
    int64_t run = 0;
    for (uint8_t v : mask.data()) {
        if (v != current) {
            rle.counts.push_back(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    rle.counts.push_back(run);
    return rle;
}

BinaryMask rle_decode(const Rle& rle)
{
    if (rle.width < 0 || rle.height < 0)
        throw ValidationError("negative RLE size");
    BinaryMask mask(rle.width, rle.height);
    auto data = mask.data();
    const auto total = static_cast<int64_t>(data.size());
    int64_t pos = 0;
    uint8_t value = 0;
    for (int64_t run : rle.counts) {
        if (run < 0 || pos + run > total)
            throw ValidationError("RLE runs exceed the mask size");
        std::fill_n(data.begin() + pos, run, value);
        pos += run;
        value ^= 1;
    }
    if (pos != total)
        throw ValidationError("RLE runs cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
    return mask;
}

std::string rle_counts_string(const Rle& rle)
{
    std::string out;
    for (size_t i = 0; i < rle.counts.size(); ++i) {
        if (i)
            out.push_back(' ');
        out += std::to_string(rle.counts[i]);
    }
    return out;
}

Rle rle_from_string(const std::string& counts, int width, int height)
{
    Rle rle{width, height, {}};
    const char* p = counts.data();
    const char* end = p + counts.size();
    while (p < end) {
        while (p < end && *p == ' ')
            ++p;
        if (p == end)
            break;
        int64_t v = 0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc{} || v < 0)
            throw ValidationError("malformed RLE counts");
        rle.counts.push_back(v);
        p = next;
    }
    rle_decode(rle);   // validates coverage
    return rle;
}

nlohmann::ordered_json rle_to_json(const Rle& rle)
{
    nlohmann::ordered_json j;
    j["size"] = {rle.height, rle.width};
    j["counts"] = rle_counts_string(rle);
    return j;
}

Rle rle_from_json(const nlohmann::ordered_json& j)
{
    if (!j.is_object() || !j.contains("size") || !j.contains("counts") || !j["size"].is_array() ||
        j["size"].size() != 2 || !j["counts"].is_string())
        throw ValidationError("RLE must be {\"size\": [h, w], \"counts\": \"...\"}");
    return rle_from_string(j["counts"].get<std::string>(), j["size"][1].get<int>(), j["size"][0].get<int>());
}

} // namespace hisam
