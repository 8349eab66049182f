// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string_view>

#include <json.hpp>

namespace bugprio {

/// Sinks for training output: one JSON object per line for events, free text
/// for warnings. Either stream may be null.
struct TrainLog {
    std::ostream* events = nullptr;
    std::ostream* warnings = nullptr;

    void event(const nlohmann::ordered_json& j) const {
        if (events) {
            *events << j.dump() << '\n';
        }
    }

    void warn(std::string_view message) const {
        if (warnings) {
            *warnings << "warning: " << message << '\n';
        }
    }
};

}  // namespace bugprio
