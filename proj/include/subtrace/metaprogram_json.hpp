#pragma once

#include "subtrace/inference.hpp"

#include <json.hpp>

#include <string>

namespace subtrace {

using Json = nlohmann::ordered_json;

// Metaprogram config format:
//   {"blackbox": "enum-gibbs" | "prior-mh"}
//   {"mix": [{"weight": "1/2", "strategy": STRATEGY, "sub": METAPROGRAM}, ...]}
//   STRATEGY := "all-choices" | {"by-labels": ["x", ...]} | {"single-site": "x"}
// Weights are rational strings. Errors carry the offending path.

struct config_error : error {
    config_error(const std::string& path, const std::string& msg)
        : error("metaprogram config error at " + path + ": " + msg), path(path) {}
    std::string path;
};

namespace detail {

inline Strategy parse_strategy(const nlohmann::json& j, const std::string& path) {
    if (j.is_string()) {
        if (j.get<std::string>() == "all-choices") return Strategy::all_choices();
        throw config_error(path, "unknown strategy '" + j.get<std::string>() + "'");
    }
    if (!j.is_object() || j.size() != 1)
        throw config_error(path, "expected \"all-choices\", {\"by-labels\": [...]}, or "
                                 "{\"single-site\": \"label\"}");
    if (j.contains("by-labels")) {
        const auto& arr = j.at("by-labels");
        if (!arr.is_array()) throw config_error(path + ".by-labels", "expected an array");
        std::set<std::string> labels;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_string())
                throw config_error(path + ".by-labels[" + std::to_string(i) + "]",
                                   "expected a string");
            labels.insert(arr[i].get<std::string>());
        }
        return Strategy::by_labels(std::move(labels));
    }
    if (j.contains("single-site")) {
        if (!j.at("single-site").is_string())
            throw config_error(path + ".single-site", "expected a string");
        return Strategy::single_site(j.at("single-site").get<std::string>());
    }
    throw config_error(path, "unknown strategy form");
}

inline MetaprogramPtr parse_metaprogram(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object() || j.size() != 1)
        throw config_error(path, "expected {\"blackbox\": ...} or {\"mix\": [...]}");
    if (j.contains("blackbox")) {
        const auto& b = j.at("blackbox");
        if (!b.is_string()) throw config_error(path + ".blackbox", "expected a string");
        std::string name = b.get<std::string>();
        if (name == "enum-gibbs") return Metaprogram::blackbox(Kernel{Kernel::Kind::EnumGibbs});
        if (name == "prior-mh") return Metaprogram::blackbox(Kernel{Kernel::Kind::PriorMH});
        throw config_error(path + ".blackbox", "unknown kernel '" + name + "'");
    }
    if (j.contains("mix")) {
        const auto& arr = j.at("mix");
        if (!arr.is_array() || arr.empty())
            throw config_error(path + ".mix", "expected a nonempty array");
        std::vector<MixClause> clauses;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            std::string cpath = path + ".mix[" + std::to_string(i) + "]";
            const auto& c = arr[i];
            if (!c.is_object()) throw config_error(cpath, "expected an object");
            if (!c.contains("weight") || !c.at("weight").is_string())
                throw config_error(cpath + ".weight", "expected a rational string");
            Rational w;
            try {
                w = parse_rational(c.at("weight").get<std::string>());
            } catch (const error& e) {
                throw config_error(cpath + ".weight", e.what());
            }
            if (!c.contains("strategy"))
                throw config_error(cpath + ".strategy", "missing");
            if (!c.contains("sub")) throw config_error(cpath + ".sub", "missing");
            clauses.push_back(MixClause{w, parse_strategy(c.at("strategy"), cpath + ".strategy"),
                                        parse_metaprogram(c.at("sub"), cpath + ".sub")});
        }
        try {
            return Metaprogram::mix(std::move(clauses));
        } catch (const error& e) {
            throw config_error(path + ".mix", e.what());
        }
    }
    throw config_error(path, "expected {\"blackbox\": ...} or {\"mix\": [...]}");
}

}  // namespace detail

inline MetaprogramPtr parse_metaprogram_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error("$", e.what());
    }
    return detail::parse_metaprogram(j, "$");
}

// Human-readable round trip for report embedding.
inline Json metaprogram_json(const Metaprogram& mp) {
    if (const auto* k = std::get_if<Kernel>(&mp.node))
        return Json{{"blackbox", k->kind == Kernel::Kind::EnumGibbs ? "enum-gibbs" : "prior-mh"}};
    Json arr = Json::array();
    for (const auto& c : std::get<std::vector<MixClause>>(mp.node)) {
        Json strat;
        if (c.strategy.kind == Strategy::Kind::AllChoices) {
            strat = "all-choices";
        } else if (c.strategy.kind == Strategy::Kind::SingleSite) {
            strat = Json{{"single-site", *c.strategy.labels.begin()}};
        } else {
            strat = Json{{"by-labels", c.strategy.labels}};
        }
        arr.push_back(Json{{"weight", rational_to_string(c.weight)},
                           {"strategy", std::move(strat)},
                           {"sub", metaprogram_json(*c.sub)}});
    }
    return Json{{"mix", std::move(arr)}};
}

// Strategies named at the top level of a metaprogram; a blackbox acts on the
// whole trace, reported as all-choices.
inline std::vector<Strategy> top_level_strategies(const Metaprogram& mp) {
    if (std::holds_alternative<Kernel>(mp.node)) return {Strategy::all_choices()};
    std::vector<Strategy> out;
    for (const auto& c : std::get<std::vector<MixClause>>(mp.node)) out.push_back(c.strategy);
    return out;
}

}  // namespace subtrace
