#include "splat/poi.hpp"

#include <algorithm>

#include "splat/error.hpp"

namespace splat {

namespace {

constexpr std::pair<HazardClass::Kind, std::string_view> kNames[] = {
    {HazardClass::Kind::Fire, "Fire"},           {HazardClass::Kind::Smoke, "Smoke"},
    {HazardClass::Kind::Debris, "Debris"},       {HazardClass::Kind::Victim, "Victim"},
    {HazardClass::Kind::AccessRoute, "AccessRoute"},
};

}  // namespace

HazardClass HazardClass::other(std::string label) {
    for (const auto& [kind, text] : kNames) {
        if (text == label) return HazardClass(kind);
    }
    HazardClass c;
    c.kind_ = Kind::Other;
    c.label_ = std::move(label);
    return c;
}

HazardClass HazardClass::parse(std::string_view name) { return other(std::string(name)); }

std::string HazardClass::name() const {
    for (const auto& [kind, text] : kNames) {
        if (kind == kind_) return std::string(text);
    }
    return label_;
}

std::vector<HazardClass> HazardClass::known() {
    std::vector<HazardClass> out;
    for (const auto& entry : kNames) out.emplace_back(entry.first);
    return out;
}

LayerState LayerState::all_known() {
    LayerState s;
    for (const auto& c : HazardClass::known()) s.enabled.insert(c);
    return s;
}

LayerState& LayerState::toggle(const HazardClass& c) {
    if (!enabled.erase(c)) enabled.insert(c);
    return *this;
}

std::vector<Poi> filter_pois(const std::vector<Poi>& pois, const LayerState& layers) {
    std::vector<Poi> out;
    std::copy_if(pois.begin(), pois.end(), std::back_inserter(out),
                 [&](const Poi& p) { return layers.visible(p.hazard); });
    return out;
}

const Poi* PoiSet::find(std::string_view id) const {
    const auto it = std::find_if(pois.begin(), pois.end(), [&](const Poi& p) { return p.id == id; });
    return it == pois.end() ? nullptr : &*it;
}

void validate_poi(const Poi& poi) {
    if (poi.id.empty()) throw Error(Errc::InvalidPoi, "POI id must not be empty");
    if (!poi.position.allFinite()) throw Error(Errc::InvalidPoi, "POI '" + poi.id + "' has a non-finite position");
}

PoiSet upsert_poi(PoiSet set, const Poi& poi) {
    validate_poi(poi);
    const auto it = std::find_if(set.pois.begin(), set.pois.end(), [&](const Poi& p) { return p.id == poi.id; });
    if (it == set.pois.end()) {
        set.pois.push_back(poi);
    } else {
        *it = poi;
    }
    ++set.revision;
    return set;
}

PoiSet remove_poi(PoiSet set, std::string_view id) {
    const auto it = std::find_if(set.pois.begin(), set.pois.end(), [&](const Poi& p) { return p.id == id; });
    if (it == set.pois.end()) return set;
    set.pois.erase(it);
    ++set.revision;
    return set;
}

void to_json(nlohmann::json& j, const Poi& poi) {
    j = nlohmann::json{{"id", poi.id},
                       {"class", poi.hazard.name()},
                       {"label", poi.label},
                       {"position", {poi.position.x(), poi.position.y(), poi.position.z()}},
                       {"updated_at", poi.updated_at}};
}

void from_json(const nlohmann::json& j, Poi& poi) {
    try {
        if (!j.is_object()) throw Error(Errc::InvalidPoi, "POI document must be an object");
        poi.id = j.at("id").get<std::string>();
        poi.hazard = HazardClass::parse(j.at("class").get<std::string>());
        poi.label = j.value("label", std::string{});
        const auto& pos = j.at("position");
        if (!pos.is_array() || pos.size() != 3) throw Error(Errc::InvalidPoi, "position must be [x,y,z]");
        for (int i = 0; i < 3; ++i) poi.position[i] = pos.at(static_cast<std::size_t>(i)).get<float>();
        poi.updated_at = j.value("updated_at", std::int64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidPoi, e.what());
    }
    validate_poi(poi);
}

void to_json(nlohmann::json& j, const PoiSet& set) {
    j = nlohmann::json{{"revision", set.revision}, {"pois", set.pois}};
}

void from_json(const nlohmann::json& j, PoiSet& set) {
    try {
        set.revision = j.at("revision").get<std::uint64_t>();
        set.pois = j.at("pois").get<std::vector<Poi>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidPoi, e.what());
    }
}

LayerState parse_layers(std::string_view csv) {
    LayerState layers;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const std::size_t comma = std::min(csv.find(',', pos), csv.size());
        std::string_view item = csv.substr(pos, comma - pos);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (!item.empty()) layers.enabled.insert(HazardClass::parse(item));
        pos = comma + 1;
    }
    return layers;
}

}  // namespace splat
