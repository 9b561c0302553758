#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "raster.hpp"

namespace modalfuse {

// Reference to one labeled image on disk.
struct RecordRef {
    std::string id;
    Modality modality = Modality::clinical;
    Label label = Label::normal;
    std::string path;
    std::optional<std::string> group_id;

    bool operator==(const RecordRef&) const = default;
};

// A decoded and preprocessed record; pixels are at the modality's target
// resolution with values in [0,1].
struct ImageRecord {
    RecordRef ref;
    Image pixels;
};

ImageRecord load_record(const RecordRef& ref);

struct DatasetManifest {
    Modality modality = Modality::clinical;
    std::vector<RecordRef> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    std::size_t class_count(Label label) const;
    std::array<std::size_t, 2> class_counts() const;
    bool has_groups() const;
};

struct ScanResult {
    DatasetManifest manifest;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

// Scans <modality_dir>/{cancer,normal}/ for decodable images. Record ids are
// "<label>/<filename>"; records are ordered by path. An optional
// <modality_dir>/groups.tsv maps record ids to group ids (id<TAB>group).
ScanResult scan_dataset(const std::filesystem::path& modality_dir, Modality modality);

struct DatasetSplit {
    DatasetManifest train;
    DatasetManifest validation;
    std::uint64_t seed = 0;
    double ratio = 0.9;
};

// Stratified split. Each class is shuffled independently with the seeded
// generator and round(ratio * n) of its units go to train, clamped so both
// partitions keep at least one unit per class. When any record carries a
// group id, units are whole groups.
DatasetSplit split_dataset(const DatasetManifest& manifest, double ratio, std::uint64_t seed);

// Tab-separated manifest file: id, modality, label, path, [group_id].
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Writes train.tsv, validation.tsv and split.json into dir.
void write_split(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit read_split(const std::filesystem::path& dir);

// Writes the file atomically (temporary sibling + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace modalfuse
