#pragma once

#include "subtrace/ast.hpp"

#include <cctype>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace subtrace {

struct parse_error : error {
    parse_error(const std::string& msg, int line, int col)
        : error("parse error at " + std::to_string(line) + ":" + std::to_string(col) + ": " + msg),
          line(line), col(col) {}
    int line;
    int col;
};

namespace detail {

struct Token {
    enum Kind { LParen, RParen, Atom, String } kind;
    std::string text;
    int line;
    int col;
};

inline bool atom_char(char c) {
    return !std::isspace(static_cast<unsigned char>(c)) && c != '(' && c != ')' && c != '"' &&
           c != ';';
}

inline std::vector<Token> lex(const std::string& src) {
    std::vector<Token> out;
    int line = 1, col = 1;
    std::size_t i = 0;
    auto advance = [&](char c) {
        if (c == '\n') { ++line; col = 1; } else { ++col; }
    };
    while (i < src.size()) {
        char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance(c); ++i;
        } else if (c == ';') {  // comment to end of line
            while (i < src.size() && src[i] != '\n') { advance(src[i]); ++i; }
        } else if (c == '(') {
            out.push_back({Token::LParen, "(", line, col});
            advance(c); ++i;
        } else if (c == ')') {
            out.push_back({Token::RParen, ")", line, col});
            advance(c); ++i;
        } else if (c == '"') {
            int sl = line, sc = col;
            advance(c); ++i;
            std::string s;
            while (i < src.size() && src[i] != '"') {
                s += src[i];
                advance(src[i]); ++i;
            }
            if (i >= src.size()) throw parse_error("unterminated string", sl, sc);
            advance('"'); ++i;
            out.push_back({Token::String, s, sl, sc});
        } else {
            int sl = line, sc = col;
            std::string s;
            while (i < src.size() && atom_char(src[i])) {
                s += src[i];
                advance(src[i]); ++i;
            }
            out.push_back({Token::Atom, s, sl, sc});
        }
    }
    return out;
}

}  // namespace detail

class Parser {
public:
    Parser(std::string source, DistNameCheck known_dist)
        : tokens_(detail::lex(source)), known_dist_(std::move(known_dist)) {}

    Program parse_program() {
        Program p;
        while (!at_end()) p.stmts.push_back(parse_stmt());
        assign_default_labels(p);
        validate(p);
        return p;
    }

private:
    std::vector<detail::Token> tokens_;
    std::size_t pos_ = 0;
    DistNameCheck known_dist_;

    bool at_end() const { return pos_ >= tokens_.size(); }

    const detail::Token& peek() {
        if (at_end()) throw parse_error("unexpected end of input", last_line(), last_col());
        return tokens_[pos_];
    }
    const detail::Token& next() {
        const auto& t = peek();
        ++pos_;
        return t;
    }
    int last_line() const { return tokens_.empty() ? 1 : tokens_.back().line; }
    int last_col() const { return tokens_.empty() ? 1 : tokens_.back().col + 1; }

    [[noreturn]] void fail(const std::string& msg, const detail::Token& t) {
        throw parse_error(msg, t.line, t.col);
    }

    void expect_rparen(const detail::Token& opener) {
        const auto& t = peek();
        if (t.kind != detail::Token::RParen) fail("expected ')'", t);
        ++pos_;
        (void)opener;
    }

    Stmt parse_stmt() {
        const auto& open = peek();
        if (open.kind != detail::Token::LParen) fail("expected '(' starting a statement", open);
        ++pos_;
        const auto& head = next();
        if (head.kind != detail::Token::Atom) fail("expected 'assume' or 'observe'", head);
        if (head.text == "assume") {
            const auto& name = next();
            if (name.kind != detail::Token::Atom || looks_like_rational(name.text))
                fail("expected identifier after 'assume'", name);
            ExprPtr e = parse_expr();
            expect_rparen(open);
            return Stmt{AssumeStmt{name.text, e}};
        }
        if (head.text == "observe") {
            ExprPtr e = parse_expr();
            if (!std::holds_alternative<DistCall>(e->node))
                fail("observe expression must be a stochastic choice (dist ...)", head);
            ExprPtr v = parse_expr();
            if (!is_value_expr(*v)) fail("observed value must be a value expression", head);
            expect_rparen(open);
            return Stmt{ObserveStmt{e, v}};
        }
        fail("unknown statement '" + head.text + "'", head);
    }

    ExprPtr parse_expr() {
        const auto& t = peek();
        if (t.kind == detail::Token::Atom) {
            ++pos_;
            if (looks_like_rational(t.text)) return make_literal(parse_rational(t.text));
            if (t.text == "#t") return church_true();
            if (t.text == "#f") return church_false();
            if (t.text[0] == '#') fail("unknown constant '" + t.text + "'", t);
            if (t.text[0] == ':') fail("unexpected keyword '" + t.text + "'", t);
            return make_var(t.text);
        }
        if (t.kind != detail::Token::LParen) fail("expected expression", t);
        const auto& open = t;
        ++pos_;
        const auto& head = peek();
        if (head.kind == detail::Token::Atom) {
            if (head.text == "lambda") { ++pos_; return parse_lambda_tail(open); }
            if (head.text == "dist") { ++pos_; return parse_dist_tail(open, head); }
            if (head.text == "flip") {
                ++pos_;
                ExprPtr p = parse_expr();
                auto [label, user] = parse_label_opt();
                expect_rparen(open);
                return make_dist("bernoulli", p, label, user);
            }
            if (head.text == "if") {
                ++pos_;
                ExprPtr c = parse_expr();
                ExprPtr a = parse_expr();
                ExprPtr b = parse_expr();
                expect_rparen(open);
                return desugar_if(c, a, b);
            }
        }
        ExprPtr fn = parse_expr();
        ExprPtr arg = parse_expr();
        expect_rparen(open);
        return make_app(fn, arg);
    }

    ExprPtr parse_lambda_tail(const detail::Token& open) {
        const auto& po = peek();
        if (po.kind != detail::Token::LParen) fail("expected '(' for lambda parameter", po);
        ++pos_;
        const auto& name = next();
        if (name.kind != detail::Token::Atom || looks_like_rational(name.text))
            fail("expected parameter name", name);
        expect_rparen(po);
        ExprPtr body = parse_expr();
        expect_rparen(open);
        return make_lambda(name.text, body);
    }

    ExprPtr parse_dist_tail(const detail::Token& open, const detail::Token& head) {
        const auto& name = next();
        if (name.kind != detail::Token::Atom) fail("expected distribution name", name);
        if (known_dist_ && !known_dist_(name.text))
            fail("unknown distribution '" + name.text + "'", name);
        ExprPtr p = parse_expr();
        auto [label, user] = parse_label_opt();
        expect_rparen(open);
        (void)head;
        return make_dist(name.text, p, label, user);
    }

    std::pair<std::string, bool> parse_label_opt() {
        if (!at_end() && peek().kind == detail::Token::Atom && peek().text == ":label") {
            ++pos_;
            const auto& s = next();
            if (s.kind != detail::Token::String) fail("expected quoted string after :label", s);
            return {s.text, true};
        }
        return {"", false};
    }

    void validate(const Program& p) {
        std::set<std::string> all_names;
        for (const auto& stmt : p.stmts)
            if (const auto* a = std::get_if<AssumeStmt>(&stmt.node)) {
                if (!all_names.insert(a->name).second)
                    throw error("duplicate assume name '" + a->name + "'");
            }
        // Statements may reference earlier bindings only; anything else is a
        // genuinely free variable (legal, evaluates to a symbol).
        std::set<std::string> bound;
        for (const auto& stmt : p.stmts) {
            const ExprPtr& e = std::holds_alternative<AssumeStmt>(stmt.node)
                                   ? std::get<AssumeStmt>(stmt.node).expr
                                   : std::get<ObserveStmt>(stmt.node).expr;
            for (const auto& fv : free_variables(*e)) {
                if (all_names.count(fv) && !bound.count(fv))
                    throw error("variable '" + fv + "' is referenced before its assume");
            }
            if (const auto* a = std::get_if<AssumeStmt>(&stmt.node)) bound.insert(a->name);
        }
    }
};

inline Program parse_program(const std::string& source, DistNameCheck known_dist = nullptr) {
    return Parser(source, std::move(known_dist)).parse_program();
}

}  // namespace subtrace
