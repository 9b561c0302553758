#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "imageproc.hpp"
#include "model.hpp"
#include "training.hpp"

namespace fs = std::filesystem;

namespace testing {


class TempDir {
public:
    TempDir()
    {
        std::string pattern = (fs::temp_directory_path() / "modalfuse-test-XXXXXX").string();
        if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::permissions(path_, fs::perms::owner_all, fs::perm_options::add, ec);
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline void write_bytes(const fs::path& path, const std::string& bytes)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal DICOM writer for fixtures. Group 0002 is always explicit VR.
struct DicomSpec {
    int rows = 4;
    int cols = 4;
    int bits_allocated = 8;
    int pixel_representation = 0;
    int samples_per_pixel = 1;
    std::string photometric = "MONOCHROME2";
    std::optional<std::string> slope;
    std::optional<std::string> intercept;
    std::optional<std::string> frames;
    std::string transfer_syntax = "1.2.840.10008.1.2.1";
    bool preamble = true;
    bool include_pixels = true;
    std::vector<std::int64_t> samples;
};

class DicomWriter {
public:
    explicit DicomWriter(bool explicit_vr) : explicit_vr_(explicit_vr) {}

    void element(std::uint16_t group, std::uint16_t elem, const char* vr, std::string value, bool force_explicit = false)
    {
        if (value.size() % 2) value.push_back(vr[0] == 'U' && vr[1] == 'I' ? '\0' : ' ');
        u16(group);
        u16(elem);
        if (explicit_vr_ || force_explicit) {
            out_.append(vr, 2);
            const std::string v(vr, 2);
            if (v == "OB" || v == "OW" || v == "SQ" || v == "UN" || v == "UT") {
                u16(0);
                u32(static_cast<std::uint32_t>(value.size()));
            } else {
                u16(static_cast<std::uint16_t>(value.size()));
            }
        } else {
            u32(static_cast<std::uint32_t>(value.size()));
        }
        out_ += value;
    }

    void us(std::uint16_t group, std::uint16_t elem, std::uint16_t v)
    {
        std::string s;
        s.push_back(static_cast<char>(v & 0xff));
        s.push_back(static_cast<char>(v >> 8));
        element(group, elem, "US", s);
    }

    std::string& bytes() { return out_; }

private:
    void u16(std::uint16_t v)
    {
        out_.push_back(static_cast<char>(v & 0xff));
        out_.push_back(static_cast<char>(v >> 8));
    }
    void u32(std::uint32_t v)
    {
        u16(static_cast<std::uint16_t>(v & 0xffff));
        u16(static_cast<std::uint16_t>(v >> 16));
    }

    bool explicit_vr_;
    std::string out_;
};

inline std::vector<std::uint8_t> make_dicom(const DicomSpec& spec)
{
    DicomWriter meta(true);
    meta.element(0x0002, 0x0010, "UI", spec.transfer_syntax, true);

    DicomWriter ds(spec.transfer_syntax == "1.2.840.10008.1.2.1");
    ds.element(0x0008, 0x0060, "CS", "OT");
    // A nested sequence with undefined length, to be skipped.
    {
        auto& b = ds.bytes();
        const std::uint8_t seq[] = {0x08, 0x00, 0x15, 0x11};
        b.append(reinterpret_cast<const char*>(seq), 4);
        if (spec.transfer_syntax == "1.2.840.10008.1.2.1") b += std::string("SQ\0\0", 4);
        b += std::string("\xff\xff\xff\xff", 4);
        b += std::string("\xfe\xff\x00\xe0\xff\xff\xff\xff", 8);
        b += std::string("\xfe\xff\x0d\xe0\x00\x00\x00\x00", 8);
        b += std::string("\xfe\xff\xdd\xe0\x00\x00\x00\x00", 8);
    }
    ds.us(0x0028, 0x0002, static_cast<std::uint16_t>(spec.samples_per_pixel));
    ds.element(0x0028, 0x0004, "CS", spec.photometric);
    if (spec.frames) ds.element(0x0028, 0x0008, "IS", *spec.frames);
    ds.us(0x0028, 0x0010, static_cast<std::uint16_t>(spec.rows));
    ds.us(0x0028, 0x0011, static_cast<std::uint16_t>(spec.cols));
    ds.us(0x0028, 0x0100, static_cast<std::uint16_t>(spec.bits_allocated));
    ds.us(0x0028, 0x0101, static_cast<std::uint16_t>(spec.bits_allocated));
    ds.us(0x0028, 0x0103, static_cast<std::uint16_t>(spec.pixel_representation));
    if (spec.intercept) ds.element(0x0028, 0x1052, "DS", *spec.intercept);
    if (spec.slope) ds.element(0x0028, 0x1053, "DS", *spec.slope);
    if (spec.include_pixels) {
        std::string pixels;
        const int bytes = spec.bits_allocated / 8;
        for (auto v : spec.samples)
            for (int b = 0; b < bytes; ++b) pixels.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff));
        ds.element(0x7FE0, 0x0010, spec.bits_allocated == 8 ? "OB" : "OW", pixels);
    }

    std::string all;
    if (spec.preamble) all = std::string(128, '\0') + "DICM";
    all += meta.bytes() + ds.bytes();
    return {all.begin(), all.end()};
}

inline modalfuse::Image8 solid_image(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b)
{
    modalfuse::Image8 img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

// <root>/<modality>/{normal,cancer}/NNN.png, solid dark (normal) vs solid
// bright (cancer) with a little deterministic variation.
inline fs::path make_separable_dataset(const fs::path& root, modalfuse::Modality m, int per_class,
                                       std::optional<int> size = std::nullopt)
{
    const auto res = modalfuse::target_resolution(m);
    const int h = size.value_or(res.height);
    const int w = size.value_or(res.width);
    const fs::path dir = root / std::string(modalfuse::to_string(m));
    for (int label = 0; label < 2; ++label) {
        const fs::path cls = dir / (label == 0 ? "normal" : "cancer");
        fs::create_directories(cls);
        for (int i = 0; i < per_class; ++i) {
            const int base = label == 0 ? 40 : 200;
            const auto v = static_cast<std::uint8_t>(base + (i * 7) % 21);
            char name[32];
            std::snprintf(name, sizeof name, "%03d.png", i);
            modalfuse::write_png(solid_image(h, w, v, v, v), cls / name);
        }
    }
    return dir;
}

// Feature extractor whose two features are the logits of the red and green
// channel at the top-left pixel. Paired with identity_head() it scores an
// image as (red, green), so test images carry their own scores.
class ChannelScoreExtractor final : public modalfuse::FeatureExtractor {
public:
    std::string name() const override { return "channel_score"; }
    std::size_t output_dim() const override { return 2; }
    std::unique_ptr<FeatureExtractor> clone() const override { return std::make_unique<ChannelScoreExtractor>(*this); }
    std::span<double> parameters() override { return {}; }
    std::span<const double> parameters() const override { return {}; }
    std::vector<double> extract(const modalfuse::Image& image, modalfuse::ExtractorTrace* = nullptr) const override
    {
        auto logit = [](double p) {
            p = std::clamp(p, 1e-9, 1.0 - 1e-9);
            return std::log(p / (1.0 - p));
        };
        return {logit(image.at(0, 0, 0)), logit(image.at(0, 0, 1))};
    }
    void backward(const modalfuse::ExtractorTrace&, std::span<const double>, std::span<double>) const override {}
};

inline modalfuse::ClassifierHead identity_head()
{
    modalfuse::HeadSpec spec{{modalfuse::LayerSpec::dense(2, modalfuse::Activation::sigmoid)}};
    modalfuse::ClassifierHead head(spec, 2, 1);
    const double params[] = {1, 0, 0, 1, 0, 0};
    std::copy(std::begin(params), std::end(params), head.parameters().begin());
    return head;
}

inline modalfuse::TrainedModel stub_model(modalfuse::Modality m)
{
    modalfuse::Network net(m, std::make_unique<ChannelScoreExtractor>(), identity_head());
    modalfuse::TrainedModel model{std::move(net), {}};
    model.metadata.modality = m;
    return model;
}

// Image at the modality's resolution whose stub score is (normal, cancer).
inline modalfuse::Image scored_image(modalfuse::Modality m, double normal, double cancer)
{
    const auto res = modalfuse::target_resolution(m);
    modalfuse::Image img(res.height, res.width, 3);
    for (int y = 0; y < res.height; ++y)
        for (int x = 0; x < res.width; ++x) {
            img.at(y, x, 0) = static_cast<float>(normal);
            img.at(y, x, 1) = static_cast<float>(cancer);
        }
    return img;
}

}  // namespace testing
