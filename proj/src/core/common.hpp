#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace modalfuse {

enum class Modality : int { clinical = 0, radiological = 1, histopathological = 2 };

inline constexpr std::array<Modality, 3> kAllModalities = {
    Modality::clinical, Modality::radiological, Modality::histopathological};

// Index 0 = normal, index 1 = cancer in every one-hot / score vector.
enum class Label : int { normal = 0, cancer = 1 };

std::string_view to_string(Modality m);
std::string_view to_string(Label l);
std::optional<Modality> parse_modality(std::string_view s);
std::optional<Label> parse_label(std::string_view s);

inline int index_of(Modality m) { return static_cast<int>(m); }
inline int index_of(Label l) { return static_cast<int>(l); }

struct Resolution {
    int height = 0;
    int width = 0;
    bool operator==(const Resolution&) const = default;
};

// Clinical 200x200, radiological and histopathological 150x150.
Resolution target_resolution(Modality m);

enum class ErrorCode : int {
    invalid_argument = 1,
    io = 2,
    config = 3,
    data = 4,
    corrupt_artifact = 5,
    config_drift = 6,
    diverged = 7,
    missing_artifact = 8,
    incomplete_modalities = 9,
    unsupported = 10,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace modalfuse
