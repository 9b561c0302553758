#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "imageproc.hpp"
#include "rng.hpp"

namespace fs = std::filesystem;

namespace modalfuse {

namespace {

std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return fields;
}

void check_field(const std::string& value, const char* what)
{
    if (value.find_first_of("\t\n\r") != std::string::npos)
        fail(ErrorCode::invalid_argument, std::string("manifest ") + what + " contains a tab or newline: " + value);
}

std::map<std::string, std::string> read_groups(const fs::path& file)
{
    std::map<std::string, std::string> groups;
    std::istringstream in(read_text_file(file));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_tabs(line);
        if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
            fail(ErrorCode::data, file.string() + ":" + std::to_string(lineno) + ": expected id<TAB>group_id");
        groups[fields[0]] = fields[1];
    }
    return groups;
}

}  // namespace

std::size_t DatasetManifest::class_count(Label label) const
{
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const RecordRef& r) { return r.label == label; }));
}

std::array<std::size_t, 2> DatasetManifest::class_counts() const
{
    return {class_count(Label::normal), class_count(Label::cancer)};
}

bool DatasetManifest::has_groups() const
{
    return std::any_of(records.begin(), records.end(), [](const RecordRef& r) { return r.group_id.has_value(); });
}

ImageRecord load_record(const RecordRef& ref)
{
    return {ref, load_preprocessed(ref.path, ref.modality)};
}

ScanResult scan_dataset(const fs::path& modality_dir, Modality modality)
{
    if (!fs::is_directory(modality_dir)) fail(ErrorCode::data, "dataset root not found: " + modality_dir.string());

    std::map<std::string, std::string> groups;
    if (fs::exists(modality_dir / "groups.tsv")) groups = read_groups(modality_dir / "groups.tsv");

    ScanResult result;
    result.manifest.modality = modality;

    for (Label label : {Label::cancer, Label::normal}) {
        const fs::path class_dir = modality_dir / std::string(to_string(label));
        if (!fs::is_directory(class_dir)) fail(ErrorCode::data, "class directory missing: " + class_dir.string());

        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dir)) {
            if (entry.is_regular_file() && is_supported_image_extension(entry.path())) files.push_back(entry.path());
        }
        if (files.empty()) fail(ErrorCode::data, "class directory empty: " + class_dir.string());

        std::size_t kept = 0;
        for (const auto& file : files) {
            try {
                decode_image_file(file);
            } catch (const Error& e) {
                ++result.skipped;
                result.warnings.push_back("skipped undecodable file " + file.string() + ": " + e.what());
                continue;
            }
            RecordRef ref;
            ref.id = std::string(to_string(label)) + "/" + file.filename().string();
            ref.modality = modality;
            ref.label = label;
            ref.path = file.string();
            if (auto it = groups.find(ref.id); it != groups.end()) ref.group_id = it->second;
            result.manifest.records.push_back(std::move(ref));
            ++kept;
        }
        if (kept == 0) fail(ErrorCode::data, "class directory has no decodable images: " + class_dir.string());
    }

    std::sort(result.manifest.records.begin(), result.manifest.records.end(),
              [](const RecordRef& a, const RecordRef& b) { return a.path < b.path; });
    return result;
}

DatasetSplit split_dataset(const DatasetManifest& manifest, double ratio, std::uint64_t seed)
{
    if (manifest.empty()) fail(ErrorCode::invalid_argument, "split: manifest is empty");
    if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorCode::invalid_argument, "split: ratio must lie in (0,1)");

    // A unit is either one record or one whole group.
    struct Unit {
        std::vector<std::size_t> members;
        std::array<std::size_t, 2> votes{};
    };
    std::vector<Unit> units;
    std::map<std::string, std::size_t> group_index;
    const bool grouped = manifest.has_groups();

    std::set<std::string> ids;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (!ids.insert(r.id).second) fail(ErrorCode::data, "split: duplicate record id " + r.id);
        std::size_t u;
        if (grouped && r.group_id) {
            auto [it, inserted] = group_index.try_emplace(*r.group_id, units.size());
            if (inserted) units.emplace_back();
            u = it->second;
        } else {
            u = units.size();
            units.emplace_back();
        }
        units[u].members.push_back(i);
        ++units[u].votes[index_of(r.label)];
    }

    // Majority label per unit; ties go to cancer.
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t u = 0; u < units.size(); ++u) {
        const auto& v = units[u].votes;
        by_class[v[1] >= v[0] ? 1 : 0].push_back(u);
    }

    std::vector<bool> in_train(manifest.records.size(), false);
    Rng rng(seed);
    for (Label label : {Label::normal, Label::cancer}) {
        auto& members = by_class[index_of(label)];
        const auto n = static_cast<long>(members.size());
        if (n < 2)
            fail(ErrorCode::data, "cannot stratify: class '" + std::string(to_string(label)) + "' has " +
                                      std::to_string(n) + (grouped ? " group(s)" : " record(s)"));
        rng.shuffle(members);
        const long n_train = std::clamp(std::lround(ratio * static_cast<double>(n)), 1L, n - 1);
        for (long k = 0; k < n_train; ++k)
            for (auto i : units[members[static_cast<std::size_t>(k)]].members) in_train[i] = true;
    }

    DatasetSplit split;
    split.seed = seed;
    split.ratio = ratio;
    split.train.modality = split.validation.modality = manifest.modality;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        (in_train[i] ? split.train : split.validation).records.push_back(manifest.records[i]);
    return split;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path)
{
    std::ostringstream out;
    for (const auto& r : manifest.records) {
        check_field(r.id, "id");
        check_field(r.path, "path");
        if (r.modality != manifest.modality)
            fail(ErrorCode::invalid_argument, "manifest record " + r.id + " has mismatched modality");
        out << r.id << '\t' << to_string(r.modality) << '\t' << to_string(r.label) << '\t' << r.path;
        if (r.group_id) {
            check_field(*r.group_id, "group_id");
            out << '\t' << *r.group_id;
        }
        out << '\n';
    }
    write_file_atomic(path, out.str());
}

DatasetManifest read_manifest(const fs::path& path)
{
    std::istringstream in(read_text_file(path));
    DatasetManifest manifest;
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    std::optional<Modality> modality;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
        auto fields = split_tabs(line);
        if (fields.size() < 4 || fields.size() > 5) fail(ErrorCode::data, where + "expected 4 or 5 tab-separated fields");
        RecordRef r;
        r.id = fields[0];
        auto m = parse_modality(fields[1]);
        auto l = parse_label(fields[2]);
        if (!m) fail(ErrorCode::data, where + "unknown modality '" + fields[1] + "'");
        if (!l) fail(ErrorCode::data, where + "unknown label '" + fields[2] + "'");
        if (modality && *modality != *m) fail(ErrorCode::data, where + "mixed modalities in one manifest");
        modality = m;
        r.modality = *m;
        r.label = *l;
        r.path = fields[3];
        if (fields.size() == 5 && !fields[4].empty()) r.group_id = fields[4];
        if (!ids.insert(r.id).second) fail(ErrorCode::data, where + "duplicate id " + r.id);
        manifest.records.push_back(std::move(r));
    }
    if (modality) manifest.modality = *modality;
    return manifest;
}

void write_split(const DatasetSplit& split, const fs::path& dir)
{
    fs::create_directories(dir);
    write_manifest(split.train, dir / "train.tsv");
    write_manifest(split.validation, dir / "validation.tsv");
    nlohmann::ordered_json meta;
    meta["modality"] = to_string(split.train.modality);
    meta["seed"] = split.seed;
    meta["ratio"] = split.ratio;
    meta["train"] = split.train.size();
    meta["validation"] = split.validation.size();
    write_file_atomic(dir / "split.json", meta.dump(2) + "\n");
}

DatasetSplit read_split(const fs::path& dir)
{
    DatasetSplit split;
    const auto meta_path = dir / "split.json";
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(meta_path));
        split.seed = meta.at("seed").get<std::uint64_t>();
        split.ratio = meta.at("ratio").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::data, "malformed " + meta_path.string() + ": " + e.what());
    }
    split.train = read_manifest(dir / "train.tsv");
    split.validation = read_manifest(dir / "validation.tsv");
    const auto modality = parse_modality(meta.value("modality", std::string{}));
    if (!modality) fail(ErrorCode::data, "malformed " + meta_path.string() + ": unknown modality");
    split.train.modality = split.validation.modality = *modality;
    return split;
}

void write_file_atomic(const fs::path& path, const std::string& contents)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            fail(ErrorCode::io, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorCode::io, "cannot rename into " + path.string());
    }
}

std::string read_text_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace modalfuse
