#pragma once

#include "json.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace vlptl {

enum class Status { normal, defect };

// Integer codes double as SRJ class indices.
enum class Relation : int { STSS = 0, STDS = 1, DT = 2 };

inline constexpr int kRelationCount = 3;

struct ComponentType {
    std::string name;
    bool is_external_interference = false;
    // Optional shape-family hint for the synthetic renderer; empty picks one from the name.
    std::string shape;

    friend bool operator==(const ComponentType&, const ComponentType&) = default;
};

struct Category {
    std::string name;
    std::string component_type;
    Status status = Status::normal;
    // Phrase substituted into alt-text templates, e.g. "normal grading ring".
    std::string display;

    friend bool operator==(const Category&, const Category&) = default;
};

// Relation of two categories judged from their fields alone.
Relation relate(const Category& a, const Category& b);

std::string_view to_string(Relation r);
std::string_view to_string(Status s);
Status status_from_string(std::string_view s);

class Taxonomy {
public:
    Taxonomy() = default;
    // Validates uniqueness and the external-interference invariants; throws TaxonomyError.
    Taxonomy(std::vector<ComponentType> component_types, std::vector<Category> categories);

    // 6 component types / 10 categories used by the desk preset.
    static Taxonomy desk_default();

    [[nodiscard]] const std::vector<ComponentType>& component_types() const { return component_types_; }
    [[nodiscard]] const std::vector<Category>& categories() const { return categories_; }

    [[nodiscard]] bool contains(std::string_view category) const;
    [[nodiscard]] const Category& category(std::string_view name) const;
    [[nodiscard]] int category_index(std::string_view name) const;
    [[nodiscard]] const ComponentType& component_type(std::string_view name) const;
    [[nodiscard]] int component_type_index(std::string_view name) const;

    // Relation between two named categories; unknown names throw TaxonomyError.
    [[nodiscard]] Relation relate(std::string_view a, std::string_view b) const;

    // Defect categories in taxonomy order (the detector's class list).
    [[nodiscard]] std::vector<std::string> defect_categories() const;

    [[nodiscard]] nlohmann::json to_json() const;
    static Taxonomy from_json(const nlohmann::json& j);

    friend bool operator==(const Taxonomy& a, const Taxonomy& b) {
        return a.component_types_ == b.component_types_ && a.categories_ == b.categories_;
    }

private:
    std::vector<ComponentType> component_types_;
    std::vector<Category> categories_;
    std::map<std::string, int, std::less<>> category_index_;
    std::map<std::string, int, std::less<>> type_index_;
};

Taxonomy load_taxonomy(const std::string& path);
void save_taxonomy(const Taxonomy& taxonomy, const std::string& path);

}  // namespace vlptl
