#pragma once

#include <cstdint>
#include <span>

#include "raster.hpp"

namespace modalfuse {

inline constexpr const char* kImplicitVRLittleEndian = "1.2.840.10008.1.2";
inline constexpr const char* kExplicitVRLittleEndian = "1.2.840.10008.1.2.1";

// Decodes a single-frame, uncompressed DICOM file (implicit or explicit VR
// little endian; MONOCHROME1, MONOCHROME2 or RGB). Rescale slope/intercept are
// applied to monochrome samples, and MONOCHROME1 is flipped so that higher
// values are brighter (v -> max + min - v over the decoded range).
SampleRaster decode_dicom(std::span<const std::uint8_t> raw);

}  // namespace modalfuse
