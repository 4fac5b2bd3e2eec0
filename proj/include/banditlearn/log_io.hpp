#pragma once

// JSON-lines interaction log:
//   {"n_items": n, "format_version": 1}
//   {"type":"organic","user_id":u,"t":t,"item":i}
//   {"type":"bandit","user_id":u,"t":t,"context":[...],"action":a,"propensity":p,"click":c}

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include <json.hpp>

#include "banditlearn/core.hpp"

namespace banditlearn {

inline constexpr int kLogFormatVersion = 1;

/// 17 significant digits: enough for any double to round-trip exactly.
inline std::string format_double17(double v) {
    char buf[40];
    const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(len));
}

inline void write_log(const InteractionLog& log, std::ostream& out) {
    out << "{\"n_items\":" << log.n_items << ",\"format_version\":" << kLogFormatVersion << "}\n";
    std::string line;
    for (const auto& u : log.users) {
        for (const auto& e : u.events) {
            line.clear();
            if (const auto* o = std::get_if<OrganicEvent>(&e)) {
                line += "{\"type\":\"organic\",\"user_id\":" + std::to_string(o->user_id) +
                        ",\"t\":" + std::to_string(o->t) + ",\"item\":" + std::to_string(o->item) + "}";
            } else {
                const auto& b = std::get<BanditEvent>(e);
                line += "{\"type\":\"bandit\",\"user_id\":" + std::to_string(b.user_id) +
                        ",\"t\":" + std::to_string(b.t) + ",\"context\":[";
                for (std::size_t j = 0; j < b.context.counts.size(); ++j) {
                    if (j) line += ',';
                    line += std::to_string(b.context.counts[j]);
                }
                line += "],\"action\":" + std::to_string(b.action.id) +
                        ",\"propensity\":" + format_double17(b.propensity) +
                        ",\"click\":" + std::to_string(static_cast<int>(b.click)) + "}";
            }
            out << line << '\n';
        }
    }
    if (!out) throw IoError("failed writing interaction log");
}

inline void write_log(const InteractionLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_log(log, out);
}

namespace detail {

template <class T>
T unsigned_field(const nlohmann::json& obj, const char* name, std::size_t line) {
    auto it = obj.find(name);
    if (it == obj.end()) throw ParseError(line, name, "missing");
    if (!it->is_number_unsigned()) throw ParseError(line, name, "expected a non-negative integer");
    const auto v = it->get<std::uint64_t>();
    if (v > std::numeric_limits<T>::max()) throw ParseError(line, name, "value too large");
    return static_cast<T>(v);
}

}  // namespace detail

/// Parses and validates a log. Malformed lines raise ParseError naming the
/// line and field; propensities outside (0,1] raise ValidationError.
inline InteractionLog read_log(std::istream& in) {
    using nlohmann::json;
    InteractionLog log;
    std::string text;
    std::size_t line_no = 0;
    bool have_header = false;

    auto parse_line = [&](const std::string& s) {
        try {
            return json::parse(s);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, "<line>", e.what());
        }
    };

    while (std::getline(in, text)) {
        ++line_no;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.empty()) continue;
        json obj = parse_line(text);
        if (!obj.is_object()) throw ParseError(line_no, "<line>", "expected a JSON object");

        if (!have_header) {
            const auto version = detail::unsigned_field<int>(obj, "format_version", line_no);
            if (version != kLogFormatVersion)
                throw ParseError(line_no, "format_version", "unsupported version " + std::to_string(version));
            log.n_items = detail::unsigned_field<std::size_t>(obj, "n_items", line_no);
            if (log.n_items == 0) throw ParseError(line_no, "n_items", "must be positive");
            have_header = true;
            continue;
        }

        auto type_it = obj.find("type");
        if (type_it == obj.end() || !type_it->is_string()) throw ParseError(line_no, "type", "missing or not a string");
        const auto type = type_it->get<std::string>();
        const auto user_id = detail::unsigned_field<std::uint64_t>(obj, "user_id", line_no);
        const auto t = detail::unsigned_field<std::uint64_t>(obj, "t", line_no);

        Event event;
        if (type == "organic") {
            OrganicEvent o{user_id, t, detail::unsigned_field<std::uint32_t>(obj, "item", line_no)};
            if (o.item >= log.n_items) throw ParseError(line_no, "item", "out of range");
            event = o;
        } else if (type == "bandit") {
            BanditEvent b;
            b.user_id = user_id;
            b.t = t;
            auto ctx_it = obj.find("context");
            if (ctx_it == obj.end() || !ctx_it->is_array()) throw ParseError(line_no, "context", "missing or not an array");
            if (ctx_it->size() != log.n_items) throw ParseError(line_no, "context", "length differs from n_items");
            b.context.counts.reserve(log.n_items);
            for (const auto& c : *ctx_it) {
                if (!c.is_number_unsigned() || c.get<std::uint64_t>() > std::numeric_limits<std::uint32_t>::max())
                    throw ParseError(line_no, "context", "entries must be non-negative integers");
                b.context.counts.push_back(c.get<std::uint32_t>());
            }
            b.action.id = detail::unsigned_field<std::uint32_t>(obj, "action", line_no);
            if (b.action.id >= log.n_items) throw ParseError(line_no, "action", "out of range");
            auto p_it = obj.find("propensity");
            if (p_it == obj.end() || !p_it->is_number()) throw ParseError(line_no, "propensity", "missing or not a number");
            b.propensity = p_it->get<double>();
            if (!(b.propensity > 0.0 && b.propensity <= 1.0))
                throw ValidationError("line " + std::to_string(line_no) + ": propensity " +
                                      format_double17(b.propensity) + " outside (0,1]");
            const auto click = detail::unsigned_field<std::uint32_t>(obj, "click", line_no);
            if (click > 1) throw ParseError(line_no, "click", "must be 0 or 1");
            b.click = static_cast<std::uint8_t>(click);
            event = std::move(b);
        } else {
            throw ParseError(line_no, "type", "unknown event type '" + type + "'");
        }

        if (log.users.empty() || log.users.back().user_id != user_id) {
            if (!log.users.empty() && log.users.back().user_id > user_id)
                throw ParseError(line_no, "user_id", "users must be grouped in ascending order");
            log.users.push_back(UserTimeline{user_id, {}});
        } else if (event_time(log.users.back().events.back()) >= t) {
            throw ParseError(line_no, "t", "event index must strictly increase within a user");
        }
        log.users.back().events.push_back(std::move(event));
    }
    if (!have_header) throw ParseError(line_no == 0 ? 1 : line_no, "n_items", "missing header record");
    return log;
}

inline InteractionLog read_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_log(in);
}

}  // namespace banditlearn
