#pragma once

#include "subtrace/trace.hpp"
#include "subtrace/value.hpp"

#include <json.hpp>

#include <string>

namespace subtrace {

using Json = nlohmann::ordered_json;

// Canonical, node-id-stable trace serialization. Schema (docs/trace-schema.md):
//   trace    := { "stmts": [stmt...] }
//   stmt     := { "assume": { "name", "expr": node } }
//             | { "observe": { "dist", "label", "obs_id", "param": node,
//                              "constrained" } }
//   node     := { "id", "value", ...kind-specific fields }
// Values and constrained expressions appear as canonical source text.

inline Json value_json(const Value& v) {
    return print_value(v);
}

inline Json aug_json(const AugExpr& ae) {
    Json j;
    j["id"] = ae.id.v;
    if (const auto* f = std::get_if<FreeVarNode>(&ae.node)) {
        j["kind"] = "free-var";
        j["name"] = f->name;
    } else if (const auto* b = std::get_if<BoundVarNode>(&ae.node)) {
        j["kind"] = "bound-var";
        j["name"] = b->name;
        j["binder"] = b->binder.v;
    } else if (const auto* l = std::get_if<LambdaNode>(&ae.node)) {
        j["kind"] = "lambda";
        j["param"] = l->param;
        j["body"] = print_expr(*l->body);
    } else if (const auto* a = std::get_if<AppNode>(&ae.node)) {
        j["kind"] = "app";
        j["fn"] = aug_json(*a->fn);
        j["arg"] = aug_json(*a->arg);
        if (a->tail) {
            j["tail"] = Json{{"bound", a->tail->bound_name}, {"body", aug_json(*a->tail->body)}};
        } else {
            j["tail"] = nullptr;
        }
    } else if (const auto* d = std::get_if<DistNode>(&ae.node)) {
        j["kind"] = "dist";
        j["dist"] = d->dist;
        j["label"] = d->label;
        j["choice_id"] = d->choice_id.v;
        j["param"] = aug_json(*d->param);
        j["result"] = aug_json(*d->result);
    } else {
        j["kind"] = "literal";
        j["literal"] = rational_to_string(std::get<LiteralNode>(ae.node).value);
    }
    j["value"] = value_json(*ae.value);
    return j;
}

inline Json trace_json(const Trace& t) {
    Json stmts = Json::array();
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node)) {
            stmts.push_back(Json{{"assume", Json{{"name", a->name}, {"expr", aug_json(*a->expr)}}}});
        } else {
            const auto& o = std::get<AugObserve>(stmt.node);
            stmts.push_back(Json{{"observe", Json{{"dist", o.dist},
                                                  {"label", o.label},
                                                  {"obs_id", o.obs_id.v},
                                                  {"param", aug_json(*o.param)},
                                                  {"constrained", print_expr(*o.constrained)}}}});
        }
    }
    return Json{{"stmts", std::move(stmts)}};
}

inline std::string canonical_hash_hex(const Trace& t) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(canonical_hash(t)));
    return std::string(buf);
}

}  // namespace subtrace
