#pragma once

#include "vlptl/curation.hpp"
#include "vlptl/taxonomy.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vlptl {

inline constexpr const char* kManifestVersion = "vlptl-manifest/1";

struct Manifest {
    Taxonomy taxonomy;
    std::vector<InstanceSample> samples;
    std::string version = kManifestVersion;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

// JSON lines: record 0 carries {version, taxonomy}, records 1..n the samples.
// Image references are stored as given (relative paths resolve against the
// manifest's directory).
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct ManifestLoadOptions {
    bool check_images = true;
};

// Throws ManifestError carrying the offending record index.
Manifest load_manifest(const std::filesystem::path& path, ManifestLoadOptions options = {});

std::filesystem::path resolve_image(const std::filesystem::path& manifest_path, const std::string& image_ref);

}  // namespace vlptl
