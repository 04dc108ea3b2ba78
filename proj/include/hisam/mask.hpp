// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

namespace hisam {

/// Row-major binary mask; every element is 0 or 1.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height) : width_(width), height_(height), data_(size_t(width) * height, 0) {}

    int width() const { return width_; }
    int height() const { return height_; }
    bool same_shape(const BinaryMask& o) const { return width_ == o.width_ && height_ == o.height_; }

    uint8_t at(int x, int y) const { return data_[size_t(y) * width_ + x]; }
    void set(int x, int y, bool v) { data_[size_t(y) * width_ + x] = v ? 1 : 0; }

    std::span<const uint8_t> data() const { return data_; }
    std::span<uint8_t> data() { return data_; }

    int64_t area() const;
    bool empty() const { return area() == 0; }

    /// CV_8U view sharing storage (values 0/1).
    cv::Mat view() const;
    /// Copy from any single-channel 8-bit image; nonzero -> 1.
    static BinaryMask from_mat(const cv::Mat& m);
    /// 0/255 image for export.
    cv::Mat to_image() const;

    BinaryMask& operator|=(const BinaryMask& o);
    BinaryMask& operator&=(const BinaryMask& o);
    bool operator==(const BinaryMask&) const = default;

private:
    int width_ = 0, height_ = 0;
    std::vector<uint8_t> data_;
};

int64_t intersection_area(const BinaryMask& a, const BinaryMask& b);

/// |a & b| / |a | b|; empty-vs-empty is 0.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Nearest-neighbour resampling (sample at output pixel centers).
BinaryMask resize_nearest(const BinaryMask& m, int width, int height);

/// Bit-packed copy for fast pairwise intersection counts.
class PackedMask {
public:
    explicit PackedMask(const BinaryMask& m);
    int64_t area() const { return area_; }
    int64_t intersect(const PackedMask& o) const;

private:
    std::vector<uint64_t> words_;
    int64_t area_ = 0;
};

/// Symmetric K x K IoU matrix of equally sized masks, row-major.
/// Diagonal is 1 for non-empty masks and 0 for empty ones.
std::vector<double> pairwise_iou(std::span<const BinaryMask> masks);

} // namespace hisam
