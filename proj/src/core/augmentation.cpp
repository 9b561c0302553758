#include "augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace modalfuse {

AugmentationPolicy policy_for(Modality modality)
{
    switch (modality) {
    case Modality::clinical: return {true, true, kMaxRotationDeg};
    case Modality::radiological: return {true, false, 0.0};
    case Modality::histopathological: return {true, true, 0.0};
    }
    return {};
}

void validate(const AugmentationPolicy& policy)
{
    if (!(policy.rotation_deg >= 0.0 && policy.rotation_deg <= kMaxRotationDeg))
        fail(ErrorCode::config, "augmentation rotation must lie in [0, 11] degrees, got " +
                                    std::to_string(policy.rotation_deg));
}

Image h_flip(const Image& image)
{
    Image out(image.height(), image.width(), image.channels());
    const int w = image.width();
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(y, w - 1 - x, c);
    return out;
}

Image v_flip(const Image& image)
{
    Image out(image.height(), image.width(), image.channels());
    const int h = image.height();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(h - 1 - y, x, c);
    return out;
}

Image rotate(const Image& image, double degrees)
{
    if (degrees == 0.0) return image;

    const double theta = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double cy = (image.height() - 1) / 2.0;
    const double cx = (image.width() - 1) / 2.0;
    const int h = image.height();
    const int w = image.width();

    Image out(h, w, image.channels());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Inverse map output pixel into the source.
            const double dx = x - cx;
            const double dy = y - cy;
            const double sx = std::clamp(cs * dx - sn * dy + cx, 0.0, w - 1.0);
            const double sy = std::clamp(sn * dx + cs * dy + cy, 0.0, h - 1.0);
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double wx = sx - x0;
            const double wy = sy - y0;
            for (int c = 0; c < image.channels(); ++c) {
                const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
                const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
                const double v = top * (1 - wy) + bottom * wy;
                out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

double sample_rotation(const AugmentationPolicy& policy, Rng& rng)
{
    return rng.uniform(-policy.rotation_deg, policy.rotation_deg);
}

Image apply_augmentation(const Image& image, const AugmentationPolicy& policy, Rng& rng)
{
    Image out = image;
    if (policy.horizontal_flip && rng.bernoulli(kFlipProbability)) out = h_flip(out);
    if (policy.vertical_flip && rng.bernoulli(kFlipProbability)) out = v_flip(out);
    if (policy.rotation_deg > 0.0) out = rotate(out, sample_rotation(policy, rng));
    return out;
}

}  // namespace modalfuse
