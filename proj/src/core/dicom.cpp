#include "dicom.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <map>
#include <string>
#include <string_view>

#include "common.hpp"

namespace modalfuse {

namespace {

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element)
{
    return (static_cast<std::uint32_t>(group) << 16) | element;
}

constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kSamplesPerPixel = tag(0x0028, 0x0002);
constexpr std::uint32_t kPhotometric = tag(0x0028, 0x0004);
constexpr std::uint32_t kPlanarConfiguration = tag(0x0028, 0x0006);
constexpr std::uint32_t kNumberOfFrames = tag(0x0028, 0x0008);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kBitsStored = tag(0x0028, 0x0101);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kRescaleIntercept = tag(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);
constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimiter = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimiter = tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

using Elements = std::map<std::uint32_t, std::span<const std::uint8_t>>;

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t pos = 0;

    bool at_end() const { return pos >= bytes_.size(); }

    std::uint16_t u16()
    {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos] | (bytes_[pos + 1] << 8));
        pos += 2;
        return v;
    }

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos + i];
        pos += 4;
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t n)
    {
        need(n);
        auto s = bytes_.subspan(pos, n);
        pos += n;
        return s;
    }

    std::uint16_t peek_group() const
    {
        if (pos + 2 > bytes_.size()) return 0xFFFF;
        return static_cast<std::uint16_t>(bytes_[pos] | (bytes_[pos + 1] << 8));
    }

private:
    void need(std::size_t n) const
    {
        if (pos + n > bytes_.size()) fail(ErrorCode::data, "DICOM: truncated data element");
    }

    std::span<const std::uint8_t> bytes_;
};

bool has_long_length(std::string_view vr)
{
    static constexpr std::string_view kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                                 "SV", "UC", "UN", "UR", "UT", "UV"};
    return std::find(std::begin(kLong), std::end(kLong), vr) != std::end(kLong);
}

void skip_nested(Reader& r, bool explicit_vr, std::uint32_t terminator);

// Reads one element header and value. Elements with undefined length are
// walked (sequence items) and not stored. Returns the tag.
std::uint32_t read_element(Reader& r, bool explicit_vr, Elements* out)
{
    const std::uint16_t group = r.u16();
    const std::uint16_t element = r.u16();
    const std::uint32_t t = tag(group, element);

    std::uint32_t length;
    if (group == 0xFFFE) {
        length = r.u32();  // item and delimiter tags never carry a VR
    } else if (explicit_vr) {
        auto vr_bytes = r.take(2);
        const std::string_view vr(reinterpret_cast<const char*>(vr_bytes.data()), 2);
        if (has_long_length(vr)) {
            r.u16();
            length = r.u32();
        } else {
            length = r.u16();
        }
    } else {
        length = r.u32();
    }

    if (length == kUndefinedLength) {
        if (t == kPixelData)
            fail(ErrorCode::unsupported, "DICOM: encapsulated (compressed) pixel data is not supported");
        if (t == kItem) {
            skip_nested(r, explicit_vr, kItemDelimiter);
        } else {
            skip_nested(r, explicit_vr, kSequenceDelimiter);
        }
        return t;
    }

    auto value = r.take(length);
    if (out && group != 0xFFFE) (*out)[t] = value;
    return t;
}

void skip_nested(Reader& r, bool explicit_vr, std::uint32_t terminator)
{
    while (!r.at_end()) {
        if (read_element(r, explicit_vr, nullptr) == terminator) return;
    }
    fail(ErrorCode::data, "DICOM: unterminated sequence");
}

std::string text_value(std::span<const std::uint8_t> v)
{
    std::string s(reinterpret_cast<const char*>(v.data()), v.size());
    while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
    return s;
}

std::uint16_t us_value(const Elements& e, std::uint32_t t, std::uint16_t fallback, const char* name)
{
    auto it = e.find(t);
    if (it == e.end()) return fallback;
    if (it->second.size() < 2) fail(ErrorCode::data, std::string("DICOM: malformed ") + name);
    return static_cast<std::uint16_t>(it->second[0] | (it->second[1] << 8));
}

double ds_value(const Elements& e, std::uint32_t t, double fallback)
{
    auto it = e.find(t);
    if (it == e.end()) return fallback;
    auto s = text_value(it->second);
    if (auto backslash = s.find('\\'); backslash != std::string::npos) s.resize(backslash);
    if (s.empty()) return fallback;
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        fail(ErrorCode::data, "DICOM: malformed decimal string '" + s + "'");
    }
}

}  // namespace

SampleRaster decode_dicom(std::span<const std::uint8_t> raw)
{
    Reader r(raw);
    if (raw.size() >= 132 && std::memcmp(raw.data() + 128, "DICM", 4) == 0) r.pos = 132;

    Elements meta;
    while (!r.at_end() && r.peek_group() == 0x0002) read_element(r, true, &meta);

    std::string syntax = kImplicitVRLittleEndian;
    if (auto it = meta.find(kTransferSyntax); it != meta.end()) syntax = text_value(it->second);

    bool explicit_vr;
    if (syntax == kExplicitVRLittleEndian) {
        explicit_vr = true;
    } else if (syntax == kImplicitVRLittleEndian) {
        explicit_vr = false;
    } else {
        fail(ErrorCode::unsupported, "DICOM: unsupported transfer syntax " + syntax);
    }

    Elements ds;
    while (!r.at_end()) {
        if (read_element(r, explicit_vr, &ds) == kPixelData) break;
    }

    if (auto it = ds.find(kNumberOfFrames); it != ds.end()) {
        const auto frames = text_value(it->second);
        int n = 1;
        std::from_chars(frames.data(), frames.data() + frames.size(), n);
        if (n > 1)
            fail(ErrorCode::unsupported,
                 "DICOM: multi-frame data (" + std::to_string(n) + " frames) is not supported");
    }

    auto pixel_it = ds.find(kPixelData);
    if (pixel_it == ds.end()) fail(ErrorCode::data, "DICOM: missing pixel data element (7FE0,0010)");

    const int rows = us_value(ds, kRows, 0, "Rows");
    const int cols = us_value(ds, kColumns, 0, "Columns");
    const int samples_per_pixel = us_value(ds, kSamplesPerPixel, 1, "SamplesPerPixel");
    const int bits_allocated = us_value(ds, kBitsAllocated, 16, "BitsAllocated");
    const int bits_stored = us_value(ds, kBitsStored, static_cast<std::uint16_t>(bits_allocated), "BitsStored");
    const bool is_signed = us_value(ds, kPixelRepresentation, 0, "PixelRepresentation") == 1;
    const bool planar = us_value(ds, kPlanarConfiguration, 0, "PlanarConfiguration") == 1;

    std::string photometric = "MONOCHROME2";
    if (auto it = ds.find(kPhotometric); it != ds.end()) photometric = text_value(it->second);

    const bool monochrome = photometric == "MONOCHROME1" || photometric == "MONOCHROME2";
    if (!monochrome && photometric != "RGB")
        fail(ErrorCode::unsupported, "DICOM: unsupported photometric interpretation " + photometric);
    if (monochrome ? samples_per_pixel != 1 : samples_per_pixel != 3)
        fail(ErrorCode::data, "DICOM: samples per pixel " + std::to_string(samples_per_pixel) +
                                  " inconsistent with " + photometric);
    if (rows <= 0 || cols <= 0) fail(ErrorCode::data, "DICOM: missing or zero image dimensions");
    if (bits_allocated != 8 && bits_allocated != 16 && bits_allocated != 32)
        fail(ErrorCode::unsupported, "DICOM: unsupported bits allocated " + std::to_string(bits_allocated));
    if (bits_stored <= 0 || bits_stored > bits_allocated)
        fail(ErrorCode::data, "DICOM: invalid bits stored " + std::to_string(bits_stored));

    const std::size_t bytes_per_sample = static_cast<std::size_t>(bits_allocated / 8);
    const std::size_t count = static_cast<std::size_t>(rows) * cols * samples_per_pixel;
    const auto pixels = pixel_it->second;
    if (pixels.size() < count * bytes_per_sample)
        fail(ErrorCode::data, "DICOM: pixel data shorter than Rows x Columns x Samples");

    const std::uint64_t mask = bits_stored == 64 ? ~0ULL : ((1ULL << bits_stored) - 1);
    auto sample_at = [&](std::size_t i) -> double {
        std::uint64_t v = 0;
        for (std::size_t b = 0; b < bytes_per_sample; ++b)
            v |= static_cast<std::uint64_t>(pixels[i * bytes_per_sample + b]) << (8 * b);
        v &= mask;
        if (is_signed && (v >> (bits_stored - 1)) & 1U)
            return static_cast<double>(static_cast<std::int64_t>(v) - static_cast<std::int64_t>(mask) - 1);
        return static_cast<double>(v);
    };

    SampleRaster out(rows, cols, samples_per_pixel);
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * cols + x;
            for (int c = 0; c < samples_per_pixel; ++c) {
                const std::size_t i = planar ? c * plane + p : p * samples_per_pixel + c;
                out.at(y, x, c) = sample_at(i);
            }
        }
    }

    if (monochrome) {
        const double slope = ds_value(ds, kRescaleSlope, 1.0);
        const double intercept = ds_value(ds, kRescaleIntercept, 0.0);
        auto data = out.data();
        for (auto& v : data) v = slope * v + intercept;
        if (photometric == "MONOCHROME1") {
            const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
            const double sum = *lo + *hi;
            for (auto& v : data) v = sum - v;
        }
    }
    return out;
}

}  // namespace modalfuse
