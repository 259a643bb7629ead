#pragma once

// Predicate expressions for CODE splits.
//
//   expr     := or_expr
//   or_expr  := and_expr { "or" and_expr }
//   and_expr := not_expr { "and" not_expr }
//   not_expr := "not" not_expr | atom
//   atom     := "(" expr ")"
//             | ident cmp literal             cmp in == != < <= > >=
//             | ident "contains" string        case-insensitive
//             | ident "starts_with" string     case-insensitive
//             | ident "is_missing"
//             | ident "in" "{" literal { "," literal } "}"
//   literal  := number | string               strings are single-quoted, \' and \\ escaped
//
// Evaluation is total: any operator other than is_missing yields false on a
// missing value, and type-mismatched comparisons yield false.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lmtree/dataset.hpp"

namespace lmtree::dsl {

class SyntaxError : public std::runtime_error {
public:
    SyntaxError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class TypeError : public std::runtime_error {
public:
    TypeError(const std::string& what, std::string feature);
    const std::string& feature() const { return feature_; }

private:
    std::string feature_;
};

using Literal = std::variant<double, std::string>;

enum class Op { Eq, Ne, Lt, Le, Gt, Ge, Contains, StartsWith, IsMissing, In, Not, And, Or };

std::string_view op_symbol(Op op);

struct Expr {
    Op op = Op::IsMissing;
    std::string feature;            // leaf operators
    std::vector<Literal> literals;  // one for comparisons and text ops, the set for In
    std::vector<Expr> children;     // one for Not, two for And / Or

    bool is_leaf() const { return op != Op::Not && op != Op::And && op != Op::Or; }
    bool operator==(const Expr&) const = default;
};

Expr compare(Op op, std::string feature, Literal value);
Expr contains(std::string feature, std::string needle);
Expr starts_with(std::string feature, std::string prefix);
Expr missing(std::string feature);
Expr in_set(std::string feature, std::vector<Literal> values);
Expr operator!(Expr e);
Expr operator&&(Expr a, Expr b);
Expr operator||(Expr a, Expr b);

// Syntax only.
Expr parse(std::string_view text);
// Syntax plus type checking against the schema.
Expr parse(std::string_view text, const Schema& schema);
void check(const Expr& expr, const Schema& schema);

std::string format(const Expr& expr);

bool evaluate(const Expr& expr, const Sample& sample);

std::vector<std::string> referenced_features(const Expr& expr);

}  // namespace lmtree::dsl
