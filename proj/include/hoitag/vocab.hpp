#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace hoitag {

/// Entity classes, actions and the threat-action subset of a dataset.
struct Vocabulary {
    std::vector<std::string> entities;
    std::vector<std::string> actions;
    std::vector<std::string> threat_actions;

    static Vocabulary standard() {
        return Vocabulary{{"person", "knife", "gun", "car", "bag", "wall"},
                          {"hold", "carry", "stand_by", "attack", "shoot", "hijack"},
                          {"attack", "shoot", "hijack"}};
    }

    int num_entities() const { return static_cast<int>(entities.size()); }
    int num_actions() const { return static_cast<int>(actions.size()); }

    bool valid_entity(int id) const { return id >= 0 && id < num_entities(); }
    bool valid_action(int id) const { return id >= 0 && id < num_actions(); }

    bool is_threat_action(int action_id) const {
        if (!valid_action(action_id)) return false;
        return std::find(threat_actions.begin(), threat_actions.end(), actions[action_id]) != threat_actions.end();
    }

    std::optional<int> entity_id(const std::string& name) const { return index_of(entities, name); }
    std::optional<int> action_id(const std::string& name) const { return index_of(actions, name); }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

private:
    static std::optional<int> index_of(const std::vector<std::string>& v, const std::string& name) {
        auto it = std::find(v.begin(), v.end(), name);
        if (it == v.end()) return std::nullopt;
        return static_cast<int>(it - v.begin());
    }
};

}  // namespace hoitag
