#pragma once

#include <filesystem>

#include "common.hpp"
#include "raster.hpp"

namespace modalfuse {

// Linear min-max window onto [0,255], round half away from zero. Constant
// rasters map to 0. Single-channel input is replicated across 3 channels.
Image8 to_png8(const SampleRaster& raster);

// Bilinear rescale (half-pixel centres, edge clamp) to the given size.
// Same-size input is returned unchanged.
Image8 resize_bilinear(const Image8& image, Resolution target);
Image8 resize(const Image8& image, Modality modality);

// v -> v / 255.
Image normalize_pixels(const Image8& image);

// Decode any supported file (.png, .jpg/.jpeg, .dcm) into an 8-bit RGB image.
Image8 decode_image_file(const std::filesystem::path& path);

// Full preprocessing: decode, resize to the modality's resolution, normalize.
Image load_preprocessed(const std::filesystem::path& path, Modality modality);

void write_png(const Image8& image, const std::filesystem::path& path);

bool is_supported_image_extension(const std::filesystem::path& path);

}  // namespace modalfuse
