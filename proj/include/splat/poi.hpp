#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace splat {

/// Hazard class of a point of interest. The first three kinds come from the
/// field workflow; `Other` carries a free-form label so the universe stays open.
class HazardClass {
public:
    enum class Kind : std::uint8_t { Fire, Smoke, Debris, Victim, AccessRoute, Other };

    HazardClass() = default;
    HazardClass(Kind kind) : kind_(kind) {}  // NOLINT(google-explicit-constructor)
    static HazardClass other(std::string label);

    /// "Fire", "Smoke", ... for known kinds; any other string becomes Other(string).
    static HazardClass parse(std::string_view name);

    Kind kind() const noexcept { return kind_; }
    const std::string& label() const noexcept { return label_; }
    std::string name() const;

    /// The five built-in classes.
    static std::vector<HazardClass> known();

    auto operator<=>(const HazardClass&) const = default;

private:
    Kind kind_ = Kind::Other;
    std::string label_;
};

struct Poi {
    std::string id;
    HazardClass hazard;
    Eigen::Vector3f position = Eigen::Vector3f::Zero();
    std::string label;
    std::int64_t updated_at = 0;  ///< ms since epoch

    bool operator==(const Poi& o) const {
        return id == o.id && hazard == o.hazard && position == o.position && label == o.label &&
               updated_at == o.updated_at;
    }
};

/// Visible hazard classes.
struct LayerState {
    std::set<HazardClass> enabled;

    static LayerState all_known();
    static LayerState none() { return {}; }

    bool visible(const HazardClass& c) const { return enabled.contains(c); }
    LayerState& toggle(const HazardClass& c);
};

/// POIs whose class is enabled, in input order.
std::vector<Poi> filter_pois(const std::vector<Poi>& pois, const LayerState& layers);

/// Ordered POI collection with a revision counter that moves only on real changes.
struct PoiSet {
    std::vector<Poi> pois;
    std::uint64_t revision = 0;

    const Poi* find(std::string_view id) const;
    std::size_t size() const noexcept { return pois.size(); }

    bool operator==(const PoiSet&) const = default;
};

/// Throws InvalidPoi for an empty id or non-finite position.
void validate_poi(const Poi& poi);

/// Replaces the entry with the same id in place, or appends. Bumps revision.
PoiSet upsert_poi(PoiSet set, const Poi& poi);

/// Deletes by id; returns the set unchanged (same revision) when absent.
PoiSet remove_poi(PoiSet set, std::string_view id);

// JSON document shapes: {id, class, label, position:[x,y,z], updated_at}
// and {revision, pois:[...]} for a whole set.
void to_json(nlohmann::json& j, const Poi& poi);
void from_json(const nlohmann::json& j, Poi& poi);
void to_json(nlohmann::json& j, const PoiSet& set);
void from_json(const nlohmann::json& j, PoiSet& set);

/// Parses a list of layer names separated by commas ("" = no layers).
LayerState parse_layers(std::string_view csv);

}  // namespace splat
