#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

#include <json.hpp>

#include "banditlearn/error.hpp"

namespace banditlearn::json_util {

/// Rejects keys outside `allowed`, so typos in config files fail loudly.
inline void require_known_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                               std::string_view what) {
    if (!obj.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ValidationError("unknown key '" + key + "' in " + std::string(what));
    }
}

template <class T>
void read_optional(const nlohmann::json& obj, const char* key, T& target, std::string_view what) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const bool non_negative =
            it->is_number_unsigned() || (it->is_number_integer() && it->template get<std::int64_t>() >= 0);
        if (!non_negative)
            throw ValidationError("key '" + std::string(key) + "' in " + std::string(what) +
                                  " must be a non-negative integer");
    }
    try {
        target = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("key '" + std::string(key) + "' in " + std::string(what) + " has the wrong type");
    }
}

}  // namespace banditlearn::json_util
