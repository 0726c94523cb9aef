#pragma once

#include "subtrace/trace.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace subtrace {

enum class NodeKind { Det, Sample };

using IdSet = std::set<NodeId>;
using Edge = std::pair<NodeId, NodeId>;

// Data edges run producer -> consumer; existential edges run controller ->
// controlled (the controller's value decides whether the target exists).
struct DepGraph {
    std::map<NodeId, NodeKind> kinds;
    std::set<Edge> data_edges;
    std::set<Edge> exist_edges;

    bool is_sample(NodeId id) const {
        auto it = kinds.find(id);
        return it != kinds.end() && it->second == NodeKind::Sample;
    }
};

namespace detail {

inline void collect_ids(const AugExpr& ae, IdSet& out) {
    for_each_node(ae, [&](const AugExpr& n) {
        out.insert(n.id);
        if (const auto* d = std::get_if<DistNode>(&n.node)) out.insert(d->choice_id);
    });
}

// Returns the root id of the walked expression.
inline NodeId graph_expr(const AugExpr& ae, DepGraph& g) {
    if (std::holds_alternative<FreeVarNode>(ae.node) ||
        std::holds_alternative<LambdaNode>(ae.node) ||
        std::holds_alternative<LiteralNode>(ae.node)) {
        g.kinds[ae.id] = NodeKind::Det;
        return ae.id;
    }
    if (const auto* b = std::get_if<BoundVarNode>(&ae.node)) {
        g.kinds[ae.id] = NodeKind::Det;
        g.data_edges.insert({b->binder, ae.id});
        return ae.id;
    }
    if (const auto* a = std::get_if<AppNode>(&ae.node)) {
        NodeId fn = graph_expr(*a->fn, g);
        NodeId arg = graph_expr(*a->arg, g);
        g.kinds[ae.id] = NodeKind::Det;
        if (a->tail) {
            NodeId body = graph_expr(*a->tail->body, g);
            g.data_edges.insert({fn, ae.id});
            g.data_edges.insert({body, ae.id});
            IdSet body_ids;
            collect_ids(*a->tail->body, body_ids);
            for (NodeId n : body_ids) g.exist_edges.insert({fn, n});
        } else {
            g.data_edges.insert({fn, ae.id});
            g.data_edges.insert({arg, ae.id});
        }
        return ae.id;
    }
    const auto& d = std::get<DistNode>(ae.node);
    NodeId param = graph_expr(*d.param, g);
    NodeId result = graph_expr(*d.result, g);
    g.kinds[d.choice_id] = NodeKind::Sample;
    g.kinds[ae.id] = NodeKind::Det;
    g.data_edges.insert({param, d.choice_id});
    IdSet result_ids;
    collect_ids(*d.result, result_ids);
    for (NodeId n : result_ids) g.exist_edges.insert({d.choice_id, n});
    g.data_edges.insert({result, ae.id});
    g.data_edges.insert({d.choice_id, ae.id});
    return ae.id;
}

}  // namespace detail

inline DepGraph build_graph(const Trace& t) {
    DepGraph g;
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node)) {
            detail::graph_expr(*a->expr, g);
        } else {
            const auto& o = std::get<AugObserve>(stmt.node);
            NodeId param = detail::graph_expr(*o.param, g);
            g.kinds[o.obs_id] = NodeKind::Sample;
            g.data_edges.insert({param, o.obs_id});
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Valid subproblems: no outgoing existential edges, and every outgoing data
// edge terminates at a Sample node. The absorbing set collects the Sample
// nodes just outside that soak up density changes; the input boundary the
// nodes the subproblem reads.

struct Subproblem {
    IdSet selected;   // S
    IdSet absorbing;  // A
    IdSet boundary;   // B
};

struct SubproblemViolation {
    enum Kind { ExistentialEscape, DataToDet, UnknownNode, SeedNotSample } kind;
    Edge edge{};
    NodeId node{};
};

struct SubproblemCheck {
    bool ok = false;
    Subproblem subproblem;
    std::vector<SubproblemViolation> violations;  // all of them, not just the first
};

namespace detail {

inline void derive_sets(const DepGraph& g, Subproblem& s) {
    for (const auto& [from, to] : g.data_edges) {
        bool from_in = s.selected.count(from) > 0;
        bool to_in = s.selected.count(to) > 0;
        if (from_in && !to_in && g.is_sample(to)) s.absorbing.insert(to);
        if (!from_in && to_in) s.boundary.insert(from);
    }
}

}  // namespace detail

inline SubproblemCheck check_subproblem(const DepGraph& g, const IdSet& selected) {
    SubproblemCheck out;
    for (NodeId id : selected) {
        if (!g.kinds.count(id)) {
            out.violations.push_back({SubproblemViolation::UnknownNode, {}, id});
        }
    }
    for (const auto& e : g.exist_edges) {
        if (selected.count(e.first) && !selected.count(e.second))
            out.violations.push_back({SubproblemViolation::ExistentialEscape, e, {}});
    }
    for (const auto& e : g.data_edges) {
        if (selected.count(e.first) && !selected.count(e.second) && !g.is_sample(e.second))
            out.violations.push_back({SubproblemViolation::DataToDet, e, {}});
    }
    if (!out.violations.empty()) return out;
    out.ok = true;
    out.subproblem.selected = selected;
    detail::derive_sets(g, out.subproblem);
    return out;
}

// Least superset of the seed closed under existential successors and Det data
// successors; the result always passes check_subproblem.
inline Subproblem complete_subproblem(const DepGraph& g, const IdSet& seed) {
    for (NodeId id : seed) {
        if (!g.kinds.count(id)) throw error("complete_subproblem: unknown node id");
        if (!g.is_sample(id)) throw error("complete_subproblem: seed node is not a Sample node");
    }
    IdSet s = seed;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& e : g.exist_edges) {
            if (s.count(e.first) && !s.count(e.second)) {
                s.insert(e.second);
                changed = true;
            }
        }
        for (const auto& e : g.data_edges) {
            if (s.count(e.first) && !s.count(e.second) && !g.is_sample(e.second)) {
                s.insert(e.second);
                changed = true;
            }
        }
    }
    SubproblemCheck check = check_subproblem(g, s);
    if (!check.ok) throw error("complete_subproblem: closure failed validity check");
    return check.subproblem;
}

inline bool data_edges_acyclic(const DepGraph& g) {
    std::map<NodeId, std::vector<NodeId>> adj;
    std::map<NodeId, int> indeg;
    for (const auto& [id, k] : g.kinds) indeg[id] = 0;
    for (const auto& e : g.data_edges) {
        adj[e.first].push_back(e.second);
        ++indeg[e.second];
    }
    std::vector<NodeId> queue;
    for (const auto& [id, d] : indeg)
        if (d == 0) queue.push_back(id);
    std::size_t done = 0;
    while (!queue.empty()) {
        NodeId n = queue.back();
        queue.pop_back();
        ++done;
        for (NodeId m : adj[n])
            if (--indeg[m] == 0) queue.push_back(m);
    }
    return done == indeg.size();
}

// DOT export: Sample nodes shaded, existential edges dashed.
inline std::string to_dot(const DepGraph& g) {
    std::ostringstream os;
    os << "digraph deps {\n";
    for (const auto& [id, kind] : g.kinds) {
        os << "  n" << id.v;
        if (kind == NodeKind::Sample)
            os << " [label=\"" << id.v << "\" style=filled fillcolor=gray75]";
        else
            os << " [label=\"" << id.v << "\"]";
        os << ";\n";
    }
    for (const auto& e : g.data_edges)
        os << "  n" << e.first.v << " -> n" << e.second.v << ";\n";
    for (const auto& e : g.exist_edges)
        os << "  n" << e.first.v << " -> n" << e.second.v << " [style=dashed];\n";
    os << "}\n";
    return os.str();
}

}  // namespace subtrace
