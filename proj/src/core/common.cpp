#include "common.hpp"

#include <cstdio>

namespace modalfuse {

std::string_view to_string(Modality m)
{
    switch (m) {
    case Modality::clinical: return "clinical";
    case Modality::radiological: return "radiological";
    case Modality::histopathological: return "histopathological";
    }
    return "unknown";
}

std::string_view to_string(Label l) { return l == Label::cancer ? "cancer" : "normal"; }

std::optional<Modality> parse_modality(std::string_view s)
{
    for (auto m : kAllModalities)
        if (to_string(m) == s) return m;
    return std::nullopt;
}

std::optional<Label> parse_label(std::string_view s)
{
    if (s == "normal" || s == "0") return Label::normal;
    if (s == "cancer" || s == "1") return Label::cancer;
    return std::nullopt;
}

Resolution target_resolution(Modality m)
{
    if (m == Modality::clinical) return {200, 200};
    return {150, 150};
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace modalfuse
