#include <catch2/catch_amalgamated.hpp>

#include "subtrace/depgraph.hpp"
#include "subtrace/executor.hpp"
#include "subtrace/parser.hpp"

#include <queue>

using namespace subtrace;

namespace {

const Registry& reg() {
    static Registry r = builtin_distributions();
    return r;
}

Trace run(const std::string& src, std::uint64_t seed = 0) {
    RandomSource rng(seed);
    return execute(parse_program(src, reg().name_check()), reg(), rng);
}

const char* kTwoFlip =
    "(assume x (flip 3/10 :label \"x\"))\n"
    "(observe (flip (if x 9/10 1/10) :label \"o\") #t)";

std::size_t sample_count(const DepGraph& g) {
    std::size_t n = 0;
    for (const auto& [id, k] : g.kinds)
        if (k == NodeKind::Sample) ++n;
    return n;
}

bool data_path_exists(const DepGraph& g, NodeId from, NodeId to) {
    std::set<NodeId> seen{from};
    std::queue<NodeId> q;
    q.push(from);
    while (!q.empty()) {
        NodeId u = q.front();
        q.pop();
        if (u == to) return true;
        for (const auto& e : g.data_edges)
            if (e.first == u && seen.insert(e.second).second) q.push(e.second);
    }
    return false;
}

// Exhaustive minimal-valid-superset search, independent of the closure
// implementation. Only usable on small graphs.
std::optional<IdSet> brute_force_min_superset(const DepGraph& g, const IdSet& seed) {
    std::vector<NodeId> rest;
    for (const auto& [id, k] : g.kinds)
        if (!seed.count(id)) rest.push_back(id);
    REQUIRE(rest.size() <= 20);
    std::optional<IdSet> best;
    for (std::uint64_t mask = 0; mask < (1ull << rest.size()); ++mask) {
        IdSet s = seed;
        for (std::size_t i = 0; i < rest.size(); ++i)
            if (mask & (1ull << i)) s.insert(rest[i]);
        if (best && s.size() >= best->size()) continue;
        if (check_subproblem(g, s).ok) best = s;
    }
    return best;
}

NodeId choice_of_label(const Trace& t, const std::string& label) {
    NodeId out{};
    bool found = false;
    for_each_node(t, [&](const AugExpr& n) {
        if (const auto* d = std::get_if<DistNode>(&n.node))
            if (d->label == label) {
                out = d->choice_id;
                found = true;
            }
    });
    REQUIRE(found);
    return out;
}

std::vector<NodeId> all_choices(const Trace& t) {
    std::vector<NodeId> out;
    for_each_node(t, [&](const AugExpr& n) {
        if (const auto* d = std::get_if<DistNode>(&n.node)) out.push_back(d->choice_id);
    });
    return out;
}

}  // namespace

TEST_CASE("deterministic assume produces no sample nodes") {
    Trace t = run("(assume x 1/2)");
    DepGraph g = build_graph(t);
    CHECK(sample_count(g) == 0);
    CHECK(g.kinds.size() == 1);  // just the literal node
}

TEST_CASE("a flip contributes exactly one sample node with existential result edges") {
    Trace t = run("(assume x (flip 1/2))");
    DepGraph g = build_graph(t);
    CHECK(sample_count(g) == 1);
    const auto& a = std::get<AugAssume>(t.stmts[0].node);
    const auto& d = std::get<DistNode>(a.expr->node);
    CHECK(g.is_sample(d.choice_id));
    // Every node of the outcome expression is existentially controlled by the choice.
    std::size_t result_nodes = 0;
    for_each_node(*d.result, [&](const AugExpr&) { ++result_nodes; });
    std::size_t exist_from_choice = 0;
    for (const auto& e : g.exist_edges)
        if (e.first == d.choice_id) ++exist_from_choice;
    CHECK(exist_from_choice == result_nodes);
}

TEST_CASE("two-flip program: data path from x's choice to the observe sample") {
    Trace t = run(kTwoFlip);
    DepGraph g = build_graph(t);
    CHECK(sample_count(g) == 2);
    NodeId x_choice = choice_of_label(t, "x");
    const auto& obs = std::get<AugObserve>(t.stmts[1].node);
    CHECK(data_path_exists(g, x_choice, obs.obs_id));
    CHECK(data_edges_acyclic(g));
}

TEST_CASE("check_subproblem validates the paper's two properties") {
    Trace t = run(kTwoFlip);
    DepGraph g = build_graph(t);

    SECTION("empty set is vacuously valid") {
        auto res = check_subproblem(g, {});
        REQUIRE(res.ok);
        CHECK(res.subproblem.absorbing.empty());
        CHECK(res.subproblem.boundary.empty());
    }

    SECTION("a bare choice with dependents violates") {
        NodeId x_choice = choice_of_label(t, "x");
        auto res = check_subproblem(g, {x_choice});
        REQUIRE_FALSE(res.ok);
        bool found_data_to_det = false;
        for (const auto& v : res.violations)
            if (v.kind == SubproblemViolation::DataToDet) found_data_to_det = true;
        CHECK(found_data_to_det);
    }

    SECTION("the closure of x's choice is valid and absorbs at the observe") {
        NodeId x_choice = choice_of_label(t, "x");
        Subproblem s = complete_subproblem(g, {x_choice});
        auto res = check_subproblem(g, s.selected);
        REQUIRE(res.ok);
        const auto& obs = std::get<AugObserve>(t.stmts[1].node);
        CHECK(s.absorbing == IdSet{obs.obs_id});
        CHECK(res.subproblem.absorbing == s.absorbing);
        CHECK(res.subproblem.boundary == s.boundary);
    }
}

TEST_CASE("complete_subproblem is a fixpoint on already-valid sets") {
    Trace t = run(kTwoFlip);
    DepGraph g = build_graph(t);
    NodeId x_choice = choice_of_label(t, "x");
    Subproblem s = complete_subproblem(g, {x_choice});
    Subproblem again = complete_subproblem(g, {x_choice});
    CHECK(s.selected == again.selected);

    // Seeding with every choice absorbs only at the observe.
    auto choices = all_choices(t);
    IdSet all(choices.begin(), choices.end());
    Subproblem full = complete_subproblem(g, all);
    CHECK(full.absorbing == IdSet{std::get<AugObserve>(t.stmts[1].node).obs_id});
}

TEST_CASE("closure equals the brute-force minimal valid superset") {
    const char* sources[] = {
        "(assume x (flip 1/2))",
        kTwoFlip,
        "(assume x (flip 1/2 :label \"x\"))\n"
        "(assume y (if x (flip 9/10 :label \"hi\") (flip 1/10 :label \"lo\")))",
        "(assume k (lambda (a) (lambda (b) a)))\n(assume y ((k 3) (flip 1/2 :label \"dead\")))",
    };
    for (const char* src : sources) {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            Trace t = run(src, seed);
            DepGraph g = build_graph(t);
            if (g.kinds.size() > 14) continue;
            auto choices = all_choices(t);
            for (std::uint64_t mask = 1; mask < (1ull << choices.size()); ++mask) {
                IdSet seedset;
                for (std::size_t i = 0; i < choices.size(); ++i)
                    if (mask & (1ull << i)) seedset.insert(choices[i]);
                Subproblem s = complete_subproblem(g, seedset);
                REQUIRE(check_subproblem(g, s.selected).ok);
                auto brute = brute_force_min_superset(g, seedset);
                REQUIRE(brute.has_value());
                CHECK(s.selected == *brute);
            }
        }
    }
}

TEST_CASE("existential closure pulls beta bodies in when the operator is selected") {
    Trace t = run("(assume x (flip 1/2 :label \"x\"))\n"
                  "(assume y (if x (flip 9/10 :label \"hi\") (flip 1/10 :label \"lo\")))");
    DepGraph g = build_graph(t);
    NodeId x_choice = choice_of_label(t, "x");
    Subproblem s = complete_subproblem(g, {x_choice});
    // The branch thunk executes under x's control, so the branch's own choice
    // is forced into the subproblem.
    auto choices = all_choices(t);
    for (NodeId c : choices) CHECK(s.selected.count(c));
    CHECK(s.absorbing.empty());
}

TEST_CASE("dot export shades sample nodes and dashes existential edges") {
    Trace t = run(kTwoFlip);
    DepGraph g = build_graph(t);
    std::string dot = to_dot(g);
    std::size_t shaded = 0, dashed = 0, pos = 0;
    while ((pos = dot.find("fillcolor=gray75", pos)) != std::string::npos) {
        ++shaded;
        pos += 1;
    }
    pos = 0;
    while ((pos = dot.find("style=dashed", pos)) != std::string::npos) {
        ++dashed;
        pos += 1;
    }
    CHECK(shaded == 2);
    CHECK(dashed == g.exist_edges.size());
    CHECK(dashed > 0);
}

TEST_CASE("seeds must be sample nodes") {
    Trace t = run("(assume x (flip 1/2))");
    DepGraph g = build_graph(t);
    const auto& a = std::get<AugAssume>(t.stmts[0].node);
    CHECK_THROWS_AS(complete_subproblem(g, {a.expr->id}), error);
    CHECK_THROWS_AS(complete_subproblem(g, {NodeId{999}}), error);
}
