#include "vlptl/manifest.hpp"

#include "vlptl/errors.hpp"

#include "json.hpp"

#include <fstream>

namespace vlptl {

std::filesystem::path resolve_image(const std::filesystem::path& manifest_path, const std::string& image_ref) {
    const std::filesystem::path ref(image_ref);
    if (ref.is_absolute()) {
        return ref;
    }
    return manifest_path.parent_path() / ref;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw ManifestError("cannot write manifest " + path.string(), -1);
    }
    os << nlohmann::json{{"version", manifest.version}, {"taxonomy", manifest.taxonomy.to_json()}}.dump() << '\n';
    for (const auto& s : manifest.samples) {
        os << nlohmann::json{{"image_ref", s.image_ref},
                             {"category", s.category},
                             {"alt_text", s.alt_text},
                             {"split", std::string(to_string(s.split))}}
                  .dump()
           << '\n';
    }
    if (!os) {
        throw ManifestError("failed writing manifest " + path.string(), -1);
    }
}

Manifest load_manifest(const std::filesystem::path& path, ManifestLoadOptions options) {
    std::ifstream is(path);
    if (!is) {
        throw ManifestError("cannot open manifest " + path.string(), -1);
    }
    Manifest m;
    std::string line;
    long record = 0;
    if (!std::getline(is, line)) {
        throw ManifestError("manifest is empty: " + path.string(), 0);
    }
    try {
        const auto header = nlohmann::json::parse(line);
        m.version = header.at("version").get<std::string>();
        if (m.version != kManifestVersion) {
            throw ManifestError("unsupported manifest version '" + m.version + "'", 0);
        }
        m.taxonomy = Taxonomy::from_json(header.at("taxonomy"));
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("malformed manifest header: ") + e.what(), 0);
    } catch (const TaxonomyError& e) {
        throw ManifestError(std::string("invalid taxonomy in manifest header: ") + e.what(), 0);
    }
    while (std::getline(is, line)) {
        ++record;
        if (line.empty()) {
            continue;
        }
        InstanceSample s;
        try {
            const auto j = nlohmann::json::parse(line);
            s.image_ref = j.at("image_ref").get<std::string>();
            s.category = j.at("category").get<std::string>();
            s.alt_text = j.at("alt_text").get<std::string>();
            s.split = split_from_string(j.at("split").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError("record " + std::to_string(record) + ": " + e.what(), record);
        } catch (const FormatError& e) {
            throw ManifestError("record " + std::to_string(record) + ": " + e.what(), record);
        }
        if (!m.taxonomy.contains(s.category)) {
            throw ManifestError("record " + std::to_string(record) + ": unresolvable category '" + s.category + "'",
                                record);
        }
        if (s.alt_text.empty()) {
            throw ManifestError("record " + std::to_string(record) + ": empty alt-text", record);
        }
        if (options.check_images && !std::filesystem::is_regular_file(resolve_image(path, s.image_ref))) {
            throw ManifestError("record " + std::to_string(record) + ": missing image " + s.image_ref, record);
        }
        m.samples.push_back(std::move(s));
    }
    return m;
}

}  // namespace vlptl
