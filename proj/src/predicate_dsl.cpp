#include "lmtree/predicate_dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>

namespace lmtree::dsl {

SyntaxError::SyntaxError(const std::string& what, std::size_t offset)
    : std::runtime_error("syntax error at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

TypeError::TypeError(const std::string& what, std::string feature)
    : std::runtime_error("type error on '" + feature + "': " + what), feature_(std::move(feature)) {}

std::string_view op_symbol(Op op) {
    switch (op) {
        case Op::Eq: return "==";
        case Op::Ne: return "!=";
        case Op::Lt: return "<";
        case Op::Le: return "<=";
        case Op::Gt: return ">";
        case Op::Ge: return ">=";
        case Op::Contains: return "contains";
        case Op::StartsWith: return "starts_with";
        case Op::IsMissing: return "is_missing";
        case Op::In: return "in";
        case Op::Not: return "not";
        case Op::And: return "and";
        case Op::Or: return "or";
    }
    return "?";
}

Expr compare(Op op, std::string feature, Literal value) {
    return Expr{op, std::move(feature), {std::move(value)}, {}};
}
Expr contains(std::string feature, std::string needle) {
    return Expr{Op::Contains, std::move(feature), {Literal{std::move(needle)}}, {}};
}
Expr starts_with(std::string feature, std::string prefix) {
    return Expr{Op::StartsWith, std::move(feature), {Literal{std::move(prefix)}}, {}};
}
Expr missing(std::string feature) { return Expr{Op::IsMissing, std::move(feature), {}, {}}; }
Expr in_set(std::string feature, std::vector<Literal> values) {
    return Expr{Op::In, std::move(feature), std::move(values), {}};
}
Expr operator!(Expr e) { return Expr{Op::Not, {}, {}, {std::move(e)}}; }
Expr operator&&(Expr a, Expr b) { return Expr{Op::And, {}, {}, {std::move(a), std::move(b)}}; }
Expr operator||(Expr a, Expr b) { return Expr{Op::Or, {}, {}, {std::move(a), std::move(b)}}; }

namespace {

enum class Tok { Ident, Number, String, Cmp, LParen, RParen, LBrace, RBrace, Comma, End };

struct Token {
    Tok kind;
    std::string text;
    double number = 0;
    Op cmp = Op::Eq;
    std::size_t offset = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        Token t;
        t.offset = pos_;
        if (pos_ >= src_.size()) {
            t.kind = Tok::End;
            return t;
        }
        char c = src_[pos_];
        if (ident_start(c)) {
            std::size_t start = pos_;
            while (pos_ < src_.size() && ident_char(src_[pos_])) ++pos_;
            t.kind = Tok::Ident;
            t.text = std::string(src_.substr(start, pos_ - start));
            return t;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
            (c == '-' && pos_ + 1 < src_.size() &&
             (std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])) || src_[pos_ + 1] == '.'))) {
            return lex_number(t);
        }
        if (c == '\'' || c == '"') return lex_string(t, c);
        auto two = src_.substr(pos_, 2);
        auto single = [&](Tok k) {
            ++pos_;
            t.kind = k;
            return t;
        };
        auto cmp = [&](Op op, std::size_t len) {
            pos_ += len;
            t.kind = Tok::Cmp;
            t.cmp = op;
            return t;
        };
        if (two == "==") return cmp(Op::Eq, 2);
        if (two == "!=") return cmp(Op::Ne, 2);
        if (two == "<=") return cmp(Op::Le, 2);
        if (two == ">=") return cmp(Op::Ge, 2);
        switch (c) {
            case '<': return cmp(Op::Lt, 1);
            case '>': return cmp(Op::Gt, 1);
            case '(': return single(Tok::LParen);
            case ')': return single(Tok::RParen);
            case '{': return single(Tok::LBrace);
            case '}': return single(Tok::RBrace);
            case ',': return single(Tok::Comma);
            default: break;
        }
        throw SyntaxError(std::string("unexpected character '") + c + "'", pos_);
    }

private:
    Token lex_number(Token& t) {
        std::size_t start = pos_;
        if (src_[pos_] == '-') ++pos_;
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                ++pos_;
            } else if ((c == 'e' || c == 'E') && pos_ + 1 < src_.size()) {
                ++pos_;
                if (src_[pos_] == '+' || src_[pos_] == '-') ++pos_;
            } else {
                break;
            }
        }
        auto text = src_.substr(start, pos_ - start);
        double v = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
            throw SyntaxError("malformed number '" + std::string(text) + "'", start);
        t.kind = Tok::Number;
        t.number = v;
        return t;
    }

    Token lex_string(Token& t, char quote) {
        std::size_t start = pos_++;
        std::string out;
        while (pos_ < src_.size()) {
            char c = src_[pos_++];
            if (c == quote) {
                t.kind = Tok::String;
                t.text = std::move(out);
                return t;
            }
            if (c == '\\') {
                if (pos_ >= src_.size()) break;
                out += src_[pos_++];
            } else {
                out += c;
            }
        }
        throw SyntaxError("unterminated string", start);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

bool is_keyword(const std::string& s) {
    static const std::set<std::string> kw{"and", "or", "not", "in", "contains", "starts_with", "is_missing"};
    return kw.contains(s);
}

class Parser {
public:
    explicit Parser(std::string_view src) : lex_(src) { advance(); }

    Expr parse_all() {
        Expr e = parse_or();
        if (cur_.kind != Tok::End) fail("unexpected trailing input");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& what) const { throw SyntaxError(what, cur_.offset); }

    void advance() { cur_ = lex_.next(); }

    bool at_keyword(std::string_view kw) const { return cur_.kind == Tok::Ident && cur_.text == kw; }

    Expr parse_or() {
        Expr lhs = parse_and();
        while (at_keyword("or")) {
            advance();
            lhs = std::move(lhs) || parse_and();
        }
        return lhs;
    }

    Expr parse_and() {
        Expr lhs = parse_not();
        while (at_keyword("and")) {
            advance();
            lhs = std::move(lhs) && parse_not();
        }
        return lhs;
    }

    Expr parse_not() {
        if (at_keyword("not")) {
            advance();
            return !parse_not();
        }
        return parse_atom();
    }

    Literal parse_literal() {
        if (cur_.kind == Tok::Number) {
            double v = cur_.number;
            advance();
            return v;
        }
        if (cur_.kind == Tok::String) {
            std::string s = cur_.text;
            advance();
            return s;
        }
        fail("expected a number or quoted string");
    }

    std::string parse_string() {
        if (cur_.kind != Tok::String) fail("expected a quoted string");
        std::string s = cur_.text;
        advance();
        return s;
    }

    Expr parse_atom() {
        if (cur_.kind == Tok::LParen) {
            advance();
            Expr e = parse_or();
            if (cur_.kind != Tok::RParen) fail("expected ')'");
            advance();
            return e;
        }
        if (cur_.kind != Tok::Ident || is_keyword(cur_.text)) fail("expected a feature name or '('");
        std::string feature = cur_.text;
        advance();

        if (cur_.kind == Tok::Cmp) {
            Op op = cur_.cmp;
            advance();
            return compare(op, std::move(feature), parse_literal());
        }
        if (at_keyword("contains")) {
            advance();
            return contains(std::move(feature), parse_string());
        }
        if (at_keyword("starts_with")) {
            advance();
            return starts_with(std::move(feature), parse_string());
        }
        if (at_keyword("is_missing")) {
            advance();
            return missing(std::move(feature));
        }
        if (at_keyword("in")) {
            advance();
            if (cur_.kind != Tok::LBrace) fail("expected '{'");
            advance();
            std::vector<Literal> values;
            values.push_back(parse_literal());
            while (cur_.kind == Tok::Comma) {
                advance();
                values.push_back(parse_literal());
            }
            if (cur_.kind != Tok::RBrace) fail("expected ',' or '}'");
            advance();
            return in_set(std::move(feature), std::move(values));
        }
        fail("expected an operator after '" + feature + "'");
    }

    Lexer lex_;
    Token cur_;
};

void check_literal(const Literal& lit, const FeatureSpec& spec) {
    bool numeric = std::holds_alternative<double>(lit);
    if (spec.kind == FeatureKind::Numeric && !numeric)
        throw TypeError("numeric feature compared with a string", spec.name);
    if (spec.kind != FeatureKind::Numeric && numeric)
        throw TypeError(to_string(spec.kind) + " feature compared with a number", spec.name);
    if (spec.kind == FeatureKind::Categorical && !spec.has_category(std::get<std::string>(lit)))
        throw TypeError("'" + std::get<std::string>(lit) + "' is not a declared category", spec.name);
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string format_literal(const Literal& lit) {
    if (const double* d = std::get_if<double>(&lit)) return format_number(*d);
    std::string out = "'";
    for (char c : std::get<std::string>(lit)) {
        if (c == '\'' || c == '\\') out += '\\';
        out += c;
    }
    out += '\'';
    return out;
}

int precedence(Op op) {
    switch (op) {
        case Op::Or: return 1;
        case Op::And: return 2;
        case Op::Not: return 3;
        default: return 4;
    }
}

std::string format_at(const Expr& e, int min_prec) {
    std::string s;
    switch (e.op) {
        case Op::Or:
            s = format_at(e.children.at(0), 1) + " or " + format_at(e.children.at(1), 2);
            break;
        case Op::And:
            s = format_at(e.children.at(0), 2) + " and " + format_at(e.children.at(1), 3);
            break;
        case Op::Not:
            // Nested negation gets explicit parentheses: "not (not x)".
            s = "not " + format_at(e.children.at(0), e.children.at(0).op == Op::Not ? 4 : 3);
            break;
        case Op::IsMissing:
            s = e.feature + " is_missing";
            break;
        case Op::In: {
            s = e.feature + " in {";
            for (std::size_t i = 0; i < e.literals.size(); ++i) {
                if (i) s += ", ";
                s += format_literal(e.literals[i]);
            }
            s += "}";
            break;
        }
        default:
            s = e.feature + " " + std::string(op_symbol(e.op)) + " " + format_literal(e.literals.at(0));
            break;
    }
    return precedence(e.op) < min_prec ? "(" + s + ")" : s;
}

std::optional<std::string_view> string_value(const FeatureValue& v) {
    if (const auto* t = std::get_if<Text>(&v)) return std::string_view(t->value);
    if (const auto* c = std::get_if<Category>(&v)) return std::string_view(c->value);
    return std::nullopt;
}

bool literal_equals(const FeatureValue& v, const Literal& lit) {
    if (const double* d = std::get_if<double>(&v)) {
        const double* l = std::get_if<double>(&lit);
        return l && *d == *l;
    }
    auto s = string_value(v);
    const std::string* l = std::get_if<std::string>(&lit);
    return s && l && *s == *l;
}

}  // namespace

Expr parse(std::string_view text) { return Parser(text).parse_all(); }

Expr parse(std::string_view text, const Schema& schema) {
    Expr e = parse(text);
    check(e, schema);
    return e;
}

void check(const Expr& e, const Schema& schema) {
    if (!e.is_leaf()) {
        for (const auto& c : e.children) check(c, schema);
        return;
    }
    const FeatureSpec* spec = schema.find(e.feature);
    if (!spec) throw TypeError("unknown feature", e.feature);
    switch (e.op) {
        case Op::IsMissing: return;
        case Op::Lt:
        case Op::Le:
        case Op::Gt:
        case Op::Ge:
            if (spec->kind != FeatureKind::Numeric) throw TypeError("ordering comparison on a non-numeric feature", e.feature);
            check_literal(e.literals.at(0), *spec);
            return;
        case Op::Contains:
        case Op::StartsWith:
            if (spec->kind == FeatureKind::Numeric) throw TypeError("text operator on a numeric feature", e.feature);
            return;
        default:
            for (const auto& lit : e.literals) check_literal(lit, *spec);
            return;
    }
}

std::string format(const Expr& expr) { return format_at(expr, 1); }

bool evaluate(const Expr& e, const Sample& sample) {
    switch (e.op) {
        case Op::And: return evaluate(e.children[0], sample) && evaluate(e.children[1], sample);
        case Op::Or: return evaluate(e.children[0], sample) || evaluate(e.children[1], sample);
        case Op::Not: return !evaluate(e.children[0], sample);
        default: break;
    }
    const FeatureValue& v = sample.get(e.feature);
    if (e.op == Op::IsMissing) return is_missing(v);
    if (is_missing(v)) return false;

    switch (e.op) {
        case Op::Eq: return literal_equals(v, e.literals[0]);
        case Op::Ne: {
            // Type-mismatched != is false, not vacuously true.
            bool same_type = std::holds_alternative<double>(v) == std::holds_alternative<double>(e.literals[0]);
            return same_type && !literal_equals(v, e.literals[0]);
        }
        case Op::Lt:
        case Op::Le:
        case Op::Gt:
        case Op::Ge: {
            const double* d = std::get_if<double>(&v);
            const double* l = std::get_if<double>(&e.literals[0]);
            if (!d || !l) return false;
            switch (e.op) {
                case Op::Lt: return *d < *l;
                case Op::Le: return *d <= *l;
                case Op::Gt: return *d > *l;
                default: return *d >= *l;
            }
        }
        case Op::Contains:
        case Op::StartsWith: {
            auto s = string_value(v);
            const std::string* l = std::get_if<std::string>(&e.literals[0]);
            if (!s || !l) return false;
            std::string hay = lower(*s), needle = lower(*l);
            return e.op == Op::Contains ? hay.find(needle) != std::string::npos : hay.starts_with(needle);
        }
        case Op::In:
            return std::any_of(e.literals.begin(), e.literals.end(),
                               [&](const Literal& lit) { return literal_equals(v, lit); });
        default: return false;
    }
}

std::vector<std::string> referenced_features(const Expr& expr) {
    std::vector<std::string> out;
    auto walk = [&out](const Expr& e, auto& self) -> void {
        if (e.is_leaf()) {
            if (std::find(out.begin(), out.end(), e.feature) == out.end()) out.push_back(e.feature);
            return;
        }
        for (const auto& c : e.children) self(c, self);
    };
    walk(expr, walk);
    return out;
}

}  // namespace lmtree::dsl
