#include "imageproc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dicom.hpp"

namespace modalfuse {

namespace {

std::uint8_t round_to_u8(double v)
{
    // std::round rounds half away from zero.
    return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

std::string lower_extension(const std::filesystem::path& path)
{
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

}  // namespace

Image8 to_png8(const SampleRaster& raster)
{
    if (raster.empty()) fail(ErrorCode::invalid_argument, "to_png8: empty raster");
    if (raster.channels() != 1 && raster.channels() != 3)
        fail(ErrorCode::unsupported, "to_png8: expected 1 or 3 channels, got " +
                                         std::to_string(raster.channels()));

    auto samples = raster.data();
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;

    Image8 out(raster.height(), raster.width(), 3);
    for (int y = 0; y < raster.height(); ++y) {
        for (int x = 0; x < raster.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = raster.at(y, x, raster.channels() == 1 ? 0 : c);
                out.at(y, x, c) = range > 0 ? round_to_u8(255.0 * (v - lo) / range) : 0;
            }
        }
    }
    return out;
}

Image8 resize_bilinear(const Image8& image, Resolution target)
{
    if (image.height() <= 0 || image.width() <= 0)
        fail(ErrorCode::invalid_argument, "resize: zero-dimension input");
    if (target.height <= 0 || target.width <= 0)
        fail(ErrorCode::invalid_argument, "resize: zero-dimension target");
    if (image.height() == target.height && image.width() == target.width) return image;

    const int channels = image.channels();
    const double sy = static_cast<double>(image.height()) / target.height;
    const double sx = static_cast<double>(image.width()) / target.width;

    Image8 out(target.height, target.width, channels);
    for (int y = 0; y < target.height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target.width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width() - 1);
            const double wx = fx - x0;
            for (int c = 0; c < channels; ++c) {
                const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
                const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
                out.at(y, x, c) = round_to_u8(top * (1 - wy) + bottom * wy);
            }
        }
    }
    return out;
}

Image8 resize(const Image8& image, Modality modality)
{
    return resize_bilinear(image, target_resolution(modality));
}

Image normalize_pixels(const Image8& image)
{
    Image out(image.height(), image.width(), image.channels());
    auto src = image.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
    return out;
}

bool is_supported_image_extension(const std::filesystem::path& path)
{
    const auto ext = lower_extension(path);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".dcm";
}

Image8 decode_image_file(const std::filesystem::path& path)
{
    const auto ext = lower_extension(path);
    if (ext == ".dcm") {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail(ErrorCode::io, "cannot open " + path.string());
        std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
        return to_png8(decode_dicom(raw));
    }

    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) fail(ErrorCode::data, "cannot decode image " + path.string());
    if (bgr.depth() != CV_8U) bgr.convertTo(bgr, CV_8U);

    Image8 out(bgr.rows, bgr.cols, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<std::uint8_t>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            out.at(y, x, 0) = row[3 * x + 2];
            out.at(y, x, 1) = row[3 * x + 1];
            out.at(y, x, 2) = row[3 * x + 0];
        }
    }
    return out;
}

Image load_preprocessed(const std::filesystem::path& path, Modality modality)
{
    return normalize_pixels(resize(decode_image_file(path), modality));
}

void write_png(const Image8& image, const std::filesystem::path& path)
{
    if (image.channels() != 3) fail(ErrorCode::invalid_argument, "write_png: expected RGB image");
    cv::Mat bgr(image.height(), image.width(), CV_8UC3);
    for (int y = 0; y < image.height(); ++y) {
        auto* row = bgr.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width(); ++x) {
            row[3 * x + 0] = image.at(y, x, 2);
            row[3 * x + 1] = image.at(y, x, 1);
            row[3 * x + 2] = image.at(y, x, 0);
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) fail(ErrorCode::io, "cannot write " + path.string());
}

}  // namespace modalfuse
