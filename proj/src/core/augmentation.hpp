#pragma once

#include <optional>

#include "common.hpp"
#include "raster.hpp"
#include "rng.hpp"

namespace modalfuse {

struct AugmentationPolicy {
    bool horizontal_flip = false;
    bool vertical_flip = false;
    // Symmetric interval [-rotation_deg, +rotation_deg]; 0 disables rotation.
    double rotation_deg = 0.0;

    bool operator==(const AugmentationPolicy&) const = default;
};

inline constexpr double kMaxRotationDeg = 11.0;
inline constexpr double kFlipProbability = 0.5;

// Clinical: both flips and +/-11 degree rotation. Radiological: horizontal flip
// only. Histopathological: both flips, no rotation.
AugmentationPolicy policy_for(Modality modality);

// Throws unless rotation_deg lies in [0, 11].
void validate(const AugmentationPolicy& policy);

Image h_flip(const Image& image);
Image v_flip(const Image& image);

// Counter-clockwise rotation about the image centre, bilinear resampling,
// out-of-bounds samples replicated from the nearest edge.
Image rotate(const Image& image, double degrees);

// Draws, in order: horizontal flip coin, vertical flip coin, rotation angle,
// each only if the policy enables it.
Image apply_augmentation(const Image& image, const AugmentationPolicy& policy, Rng& rng);

// Angle draw used by apply_augmentation.
double sample_rotation(const AugmentationPolicy& policy, Rng& rng);

}  // namespace modalfuse
