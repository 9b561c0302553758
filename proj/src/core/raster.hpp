#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace modalfuse {

// Interleaved height x width x channels raster.
template <typename T>
class Raster {
public:
    Raster() = default;
    Raster(int height, int width, int channels, T fill = T{})
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill)
    {
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    T& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    const T& at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }

    bool operator==(const Raster&) const = default;

private:
    std::size_t index(int y, int x, int c) const
    {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

// Decoded DICOM samples (after rescale), 1 or 3 channels.
using SampleRaster = Raster<double>;
// 8-bit image, 3 channels (RGB).
using Image8 = Raster<std::uint8_t>;
// Normalized image, values in [0,1], 3 channels.
using Image = Raster<float>;

}  // namespace modalfuse
