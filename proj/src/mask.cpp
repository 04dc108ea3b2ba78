// SPDX-License-Identifier: Apache-2.0
#include "hisam/mask.hpp"

#include <bit>
#include <stdexcept>

#include "hisam/errors.hpp"

namespace hisam {

int64_t BinaryMask::area() const
{
    int64_t n = 0;
    for (auto v : data_)
        n += v;
    return n;
}

cv::Mat BinaryMask::view() const
{
    return cv::Mat(height_, width_, CV_8U, const_cast<uint8_t*>(data_.data()));
}

BinaryMask BinaryMask::from_mat(const cv::Mat& m)
{
    if (m.type() != CV_8U)
        throw ValidationError("mask image must be single-channel 8-bit");
    BinaryMask out(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<uint8_t>(y);
        for (int x = 0; x < m.cols; ++x)
            out.data_[size_t(y) * m.cols + x] = row[x] ? 1 : 0;
    }
    return out;
}

cv::Mat BinaryMask::to_image() const
{
    cv::Mat img;
    view().convertTo(img, CV_8U, 255.0);
    return img;
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& o)
{
    if (!same_shape(o))
        throw ValidationError("mask shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i)
        data_[i] |= o.data_[i];
    return *this;
}

BinaryMask& BinaryMask::operator&=(const BinaryMask& o)
{
    if (!same_shape(o))
        throw ValidationError("mask shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i)
        data_[i] &= o.data_[i];
    return *this;
}

int64_t intersection_area(const BinaryMask& a, const BinaryMask& b)
{
    if (!a.same_shape(b))
        throw ValidationError("mask shape mismatch");
    int64_t n = 0;
    auto da = a.data(), db = b.data();
    for (size_t i = 0; i < da.size(); ++i)
        n += da[i] & db[i];
    return n;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b)
{
    const auto inter = intersection_area(a, b);
    const auto uni = a.area() + b.area() - inter;
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

BinaryMask resize_nearest(const BinaryMask& m, int width, int height)
{
    BinaryMask out(width, height);
    if (m.width() == 0 || m.height() == 0)
        return out;
    const double sx = double(m.width()) / width, sy = double(m.height()) / height;
    for (int y = 0; y < height; ++y) {
        const int src_y = std::min(m.height() - 1, int((y + 0.5) * sy));
        for (int x = 0; x < width; ++x) {
            const int src_x = std::min(m.width() - 1, int((x + 0.5) * sx));
            out.set(x, y, m.at(src_x, src_y));
        }
    }
    return out;
}

PackedMask::PackedMask(const BinaryMask& m) : words_((m.data().size() + 63) / 64, 0)
{
    auto d = m.data();
    for (size_t i = 0; i < d.size(); ++i)
        if (d[i])
            words_[i / 64] |= uint64_t{1} << (i % 64);
    area_ = m.area();
}

int64_t PackedMask::intersect(const PackedMask& o) const
{
    if (words_.size() != o.words_.size())
        throw ValidationError("mask shape mismatch");
    int64_t n = 0;
    for (size_t i = 0; i < words_.size(); ++i)
        n += std::popcount(words_[i] & o.words_[i]);
    return n;
}

std::vector<double> pairwise_iou(std::span<const BinaryMask> masks)
{
    const size_t k = masks.size();
    for (size_t i = 1; i < k; ++i)
        if (!masks[i].same_shape(masks[0]))
            throw ValidationError("mask shape mismatch in IoU matrix");
    std::vector<PackedMask> packed;
    packed.reserve(k);
    for (const auto& m : masks)
        packed.emplace_back(m);
    std::vector<double> iou(k * k, 0.0);
    for (size_t i = 0; i < k; ++i) {
        iou[i * k + i] = packed[i].area() > 0 ? 1.0 : 0.0;
        for (size_t j = i + 1; j < k; ++j) {
            const auto inter = packed[i].intersect(packed[j]);
            const auto uni = packed[i].area() + packed[j].area() - inter;
            const double v = uni == 0 ? 0.0 : double(inter) / double(uni);
            iou[i * k + j] = v;
            iou[j * k + i] = v;
        }
    }
    return iou;
}

} // namespace hisam
