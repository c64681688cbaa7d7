#include "vlptl/taxonomy.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <fstream>

namespace vlptl {

Relation relate(const Category& a, const Category& b) {
    if (a.name == b.name) {
        return Relation::STSS;
    }
    if (a.component_type == b.component_type) {
        return Relation::STDS;
    }
    return Relation::DT;
}

std::string_view to_string(Relation r) {
    switch (r) {
        case Relation::STSS:
            return "STSS";
        case Relation::STDS:
            return "STDS";
        case Relation::DT:
            return "DT";
    }
    return "?";
}

std::string_view to_string(Status s) { return s == Status::normal ? "normal" : "defect"; }

Status status_from_string(std::string_view s) {
    if (s == "normal") {
        return Status::normal;
    }
    if (s == "defect") {
        return Status::defect;
    }
    throw TaxonomyError("unknown status '" + std::string(s) + "'");
}

Taxonomy::Taxonomy(std::vector<ComponentType> component_types, std::vector<Category> categories)
    : component_types_(std::move(component_types)), categories_(std::move(categories)) {
    for (std::size_t i = 0; i < component_types_.size(); ++i) {
        const auto& t = component_types_[i];
        if (t.name.empty()) {
            throw TaxonomyError("component type with empty name");
        }
        if (!type_index_.emplace(t.name, static_cast<int>(i)).second) {
            throw TaxonomyError("duplicate component type '" + t.name + "'");
        }
    }
    std::map<std::string, std::vector<Status>> statuses;
    for (std::size_t i = 0; i < categories_.size(); ++i) {
        auto& c = categories_[i];
        if (c.name.empty()) {
            throw TaxonomyError("category with empty name");
        }
        if (!type_index_.contains(c.component_type)) {
            throw TaxonomyError("category '" + c.name + "' references unknown component type '" + c.component_type + "'");
        }
        if (!category_index_.emplace(c.name, static_cast<int>(i)).second) {
            throw TaxonomyError("duplicate category '" + c.name + "'");
        }
        if (c.display.empty()) {
            c.display = c.name;
            std::replace(c.display.begin(), c.display.end(), '_', ' ');
        }
        statuses[c.component_type].push_back(c.status);
    }
    for (const auto& t : component_types_) {
        const auto& st = statuses[t.name];
        if (t.is_external_interference) {
            if (st.size() != 1 || st.front() != Status::defect) {
                throw TaxonomyError("external-interference type '" + t.name + "' must have exactly one defect category");
            }
        } else if (std::count(st.begin(), st.end(), Status::normal) > 1) {
            // Several defect kinds per component are allowed, one normal category at most.
            throw TaxonomyError("component type '" + t.name + "' has more than one normal category");
        }
    }
}

Taxonomy Taxonomy::desk_default() {
    std::vector<ComponentType> types = {
        {"grading_ring", false, "ring"},      {"shielded_ring", false, "double_ring"},
        {"shockproof_hammer", false, "dumbbell"}, {"insulator", false, "stacked_discs"},
        {"bird_nest", true, "blob_cluster"},  {"foreign_body", true, "streamer"},
    };
    std::vector<Category> cats = {
        {"normal_grading_ring", "grading_ring", Status::normal, "normal grading ring"},
        {"grading_ring_damage", "grading_ring", Status::defect, "damaged grading ring"},
        {"normal_shielded_ring", "shielded_ring", Status::normal, "normal shielded ring"},
        {"shielded_ring_corrosion", "shielded_ring", Status::defect, "rusted shielded ring"},
        {"normal_shockproof_hammer", "shockproof_hammer", Status::normal, "normal shockproof hammer"},
        {"shockproof_hammer_intersection", "shockproof_hammer", Status::defect, "pair of intersecting shockproof hammers"},
        {"normal_insulator", "insulator", Status::normal, "normal insulator string"},
        {"insulator_bunch_drop", "insulator", Status::defect, "insulator string with a dropped disc"},
        {"bird_nest", "bird_nest", Status::defect, "bird nest"},
        {"foreign_body", "foreign_body", Status::defect, "foreign body"},
    };
    return Taxonomy(std::move(types), std::move(cats));
}

bool Taxonomy::contains(std::string_view category) const { return category_index_.contains(category); }

const Category& Taxonomy::category(std::string_view name) const {
    return categories_[static_cast<std::size_t>(category_index(name))];
}

int Taxonomy::category_index(std::string_view name) const {
    const auto it = category_index_.find(name);
    if (it == category_index_.end()) {
        throw TaxonomyError("unknown category '" + std::string(name) + "'");
    }
    return it->second;
}

const ComponentType& Taxonomy::component_type(std::string_view name) const {
    return component_types_[static_cast<std::size_t>(component_type_index(name))];
}

int Taxonomy::component_type_index(std::string_view name) const {
    const auto it = type_index_.find(name);
    if (it == type_index_.end()) {
        throw TaxonomyError("unknown component type '" + std::string(name) + "'");
    }
    return it->second;
}

Relation Taxonomy::relate(std::string_view a, std::string_view b) const {
    return vlptl::relate(category(a), category(b));
}

std::vector<std::string> Taxonomy::defect_categories() const {
    std::vector<std::string> out;
    for (const auto& c : categories_) {
        if (c.status == Status::defect) {
            out.push_back(c.name);
        }
    }
    return out;
}

nlohmann::json Taxonomy::to_json() const {
    nlohmann::json j;
    j["component_types"] = nlohmann::json::array();
    for (const auto& t : component_types_) {
        nlohmann::json jt = {{"name", t.name}, {"external_interference", t.is_external_interference}};
        if (!t.shape.empty()) {
            jt["shape"] = t.shape;
        }
        j["component_types"].push_back(jt);
    }
    j["categories"] = nlohmann::json::array();
    for (const auto& c : categories_) {
        j["categories"].push_back({{"name", c.name},
                                   {"component_type", c.component_type},
                                   {"status", std::string(to_string(c.status))},
                                   {"display", c.display}});
    }
    return j;
}

Taxonomy Taxonomy::from_json(const nlohmann::json& j) {
    try {
        std::vector<ComponentType> types;
        for (const auto& jt : j.at("component_types")) {
            types.push_back({jt.at("name").get<std::string>(), jt.value("external_interference", false),
                             jt.value("shape", std::string{})});
        }
        std::vector<Category> cats;
        for (const auto& jc : j.at("categories")) {
            cats.push_back({jc.at("name").get<std::string>(), jc.at("component_type").get<std::string>(),
                            status_from_string(jc.at("status").get<std::string>()), jc.value("display", std::string{})});
        }
        return Taxonomy(std::move(types), std::move(cats));
    } catch (const nlohmann::json::exception& e) {
        throw TaxonomyError(std::string("malformed taxonomy: ") + e.what());
    }
}

Taxonomy load_taxonomy(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw TaxonomyError("cannot open taxonomy file " + path);
    }
    try {
        return Taxonomy::from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
        throw TaxonomyError("taxonomy file " + path + " is not valid JSON: " + e.what());
    }
}

void save_taxonomy(const Taxonomy& taxonomy, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        throw TaxonomyError("cannot write taxonomy file " + path);
    }
    os << taxonomy.to_json().dump(2) << '\n';
}

}  // namespace vlptl
