#pragma once

#include "nscert/grid.hpp"
#include "nscert/io.hpp"
#include "nscert/objective.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nscert {

/// Configuration error with the offending line number.
struct ConfigError : std::runtime_error {
    int line;
    ConfigError(int ln, const std::string& msg)
        : std::runtime_error("config:" + std::to_string(ln) + ": " + msg), line(ln) {}
};

// ---------------------------------------------------------------------------
// expression grammar over (x1, x2) with sin, cos, exp, min, max and the
// constants pi and eps
// ---------------------------------------------------------------------------

namespace expr {

struct Node {
    virtual ~Node() = default;
    virtual double eval(double x1, double x2, double eps) const = 0;
};
using NodePtr = std::shared_ptr<const Node>;

struct Num final : Node {
    double v;
    explicit Num(double x) : v(x) {}
    double eval(double, double, double) const override { return v; }
};
struct Var final : Node {
    int which;  // 0: x1, 1: x2, 2: eps
    explicit Var(int w) : which(w) {}
    double eval(double x1, double x2, double eps) const override {
        return which == 0 ? x1 : which == 1 ? x2 : eps;
    }
};
struct Unary final : Node {
    int op;  // 0: neg, 1: sin, 2: cos, 3: exp
    NodePtr a;
    Unary(int o, NodePtr n) : op(o), a(std::move(n)) {}
    double eval(double x1, double x2, double e) const override {
        const double v = a->eval(x1, x2, e);
        switch (op) {
            case 0: return -v;
            case 1: return std::sin(v);
            case 2: return std::cos(v);
            default: return std::exp(v);
        }
    }
};
struct Binary final : Node {
    char op;  // + - * / ^ m(in) M(ax)
    NodePtr a, b;
    Binary(char o, NodePtr x, NodePtr y) : op(o), a(std::move(x)), b(std::move(y)) {}
    double eval(double x1, double x2, double e) const override {
        const double u = a->eval(x1, x2, e), v = b->eval(x1, x2, e);
        switch (op) {
            case '+': return u + v;
            case '-': return u - v;
            case '*': return u * v;
            case '/': return u / v;
            case '^': return std::pow(u, v);
            case 'm': return std::min(u, v);
            default: return std::max(u, v);
        }
    }
};

class Parser {
  public:
    Parser(const std::string& s, int line) : s_(s), line_(line) {}

    NodePtr parse() {
        NodePtr e = expr();
        skip_ws();
        if (pos_ != s_.size()) fail("trailing characters in expression");
        return e;
    }

  private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(line_, msg + " in '" + s_ + "'");
    }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    NodePtr expr() {
        NodePtr a = term();
        for (;;) {
            if (eat('+'))
                a = std::make_shared<Binary>('+', a, term());
            else if (eat('-'))
                a = std::make_shared<Binary>('-', a, term());
            else
                return a;
        }
    }
    NodePtr term() {
        NodePtr a = factor();
        for (;;) {
            if (eat('*'))
                a = std::make_shared<Binary>('*', a, factor());
            else if (eat('/'))
                a = std::make_shared<Binary>('/', a, factor());
            else
                return a;
        }
    }
    NodePtr factor() {
        if (eat('-')) return std::make_shared<Unary>(0, factor());
        if (eat('+')) return factor();
        NodePtr a = atom();
        if (eat('^')) return std::make_shared<Binary>('^', a, factor());
        return a;
    }
    NodePtr atom() {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end of expression");
        const char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = expr();
            if (!eat(')')) fail("missing ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const char* start = s_.c_str() + pos_;
            char* end = nullptr;
            const double v = std::strtod(start, &end);
            if (end == start) fail("bad number");
            pos_ += static_cast<std::size_t>(end - start);
            return std::make_shared<Num>(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t b = pos_;
            while (pos_ < s_.size() &&
                   (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
                ++pos_;
            const std::string id = s_.substr(b, pos_ - b);
            if (id == "x1") return std::make_shared<Var>(0);
            if (id == "x2") return std::make_shared<Var>(1);
            if (id == "eps" || id == "epsilon") return std::make_shared<Var>(2);
            if (id == "pi") return std::make_shared<Num>(M_PI);
            if (id == "sin" || id == "cos" || id == "exp") {
                if (!eat('(')) fail("expected '(' after " + id);
                NodePtr a = expr();
                if (!eat(')')) fail("missing ')'");
                const int op = id == "sin" ? 1 : id == "cos" ? 2 : 3;
                return std::make_shared<Unary>(op, a);
            }
            if (id == "min" || id == "max") {
                if (!eat('(')) fail("expected '(' after " + id);
                NodePtr a = expr();
                if (!eat(',')) fail("expected ',' in " + id);
                NodePtr b2 = expr();
                if (!eat(')')) fail("missing ')'");
                return std::make_shared<Binary>(id == "min" ? 'm' : 'M', a, b2);
            }
            fail("unknown identifier '" + id + "'");
        }
        fail("unexpected character");
    }

    const std::string& s_;
    int line_;
    std::size_t pos_ = 0;
};

}  // namespace expr

// ---------------------------------------------------------------------------
// flat key = value file with [section] headers
// ---------------------------------------------------------------------------

struct ConfigValue {
    std::string text;
    int line = 0;
};

class RunConfig {
  public:
    static RunConfig parse(const std::string& text, std::string base_dir = ".") {
        RunConfig c;
        c.base_dir_ = std::move(base_dir);
        std::istringstream is(text);
        std::string raw;
        std::string section = "";
        int ln = 0;
        while (std::getline(is, raw)) {
            ++ln;
            std::string line = raw;
            if (auto p = line.find('#'); p != std::string::npos) line.erase(p);
            auto trim = [](std::string& s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
            };
            trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(ln, "malformed section header");
                section = line.substr(1, line.size() - 2);
                trim(section);
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(ln, "expected 'key = value'");
            std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            trim(key);
            trim(val);
            if (key.empty()) throw ConfigError(ln, "empty key");
            c.values_[section + "." + key] = ConfigValue{val, ln};
        }
        return c;
    }

    static RunConfig parse_file(const std::string& path) {
        return parse(read_text(path),
                     std::filesystem::path(path).parent_path().string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const ConfigValue& at(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end())
            throw ConfigError(0, "missing required key '" + key + "'");
        return it->second;
    }

    double number(const std::string& key) const {
        const auto& v = at(key);
        try {
            std::size_t used = 0;
            const double x = std::stod(v.text, &used);
            if (used != v.text.size()) throw std::invalid_argument("");
            return x;
        } catch (const std::exception&) {
            throw ConfigError(v.line, "'" + key + "' is not a number: " + v.text);
        }
    }

    double number_or(const std::string& key, double dflt) const {
        return has(key) ? number(key) : dflt;
    }

    long long integer(const std::string& key) const {
        const auto& v = at(key);
        try {
            std::size_t used = 0;
            const long long x = std::stoll(v.text, &used);
            if (used != v.text.size()) throw std::invalid_argument("");
            return x;
        } catch (const std::exception&) {
            throw ConfigError(v.line, "'" + key + "' is not an integer: " + v.text);
        }
    }

    long long integer_or(const std::string& key, long long dflt) const {
        return has(key) ? integer(key) : dflt;
    }

    std::vector<double> numbers(const std::string& key) const {
        const auto& v = at(key);
        std::istringstream is(v.text);
        std::vector<double> out;
        double x;
        while (is >> x) out.push_back(x);
        if (!is.eof()) throw ConfigError(v.line, "'" + key + "' is not a number list");
        return out;
    }

    std::vector<double> numbers_or(const std::string& key) const {
        return has(key) ? numbers(key) : std::vector<double>{};
    }

    /// Field value: constant | expression over (x1,x2) | @path to a dump.
    Field field(const std::string& key, const Grid2D& g, double eps) const {
        const auto& v = at(key);
        if (!v.text.empty() && v.text.front() == '@') {
            const std::string rel = v.text.substr(1);
            const auto path = std::filesystem::path(base_dir_) / rel;
            try {
                return load_field_on(g, path.string());
            } catch (const std::exception& e) {
                throw ConfigError(v.line, std::string("cannot load field: ") + e.what());
            }
        }
        const auto ast = expr::Parser(v.text, v.line).parse();
        return field_from(g, [&](double x, double y) { return ast->eval(x, y, eps); });
    }

    Field field_or(const std::string& key, const Grid2D& g, double eps,
                   double constant_default) const {
        if (!has(key)) return constant_field(g, constant_default);
        return field(key, g, eps);
    }

    const std::string& base_dir() const { return base_dir_; }

  private:
    std::map<std::string, ConfigValue> values_;
    std::string base_dir_ = ".";
};

/// Builds the problem instance from the [grid], [problem], [beta] and
/// [solver] sections; fails with a line-numbered diagnostic.
inline ProblemParams problem_from_config(const RunConfig& c) {
    const int nx = static_cast<int>(c.integer("grid.nx"));
    const int ny = static_cast<int>(c.integer("grid.ny"));
    const auto dom = c.numbers("grid.domain");
    const auto er = c.numbers("grid.e_rect");
    if (dom.size() != 4) throw ConfigError(c.at("grid.domain").line, "domain needs 4 numbers");
    if (er.size() != 4) throw ConfigError(c.at("grid.e_rect").line, "e_rect needs 4 numbers");

    Grid2D grid;
    try {
        grid = build_grid(nx, ny, Rect{dom[0], dom[1], dom[2], dom[3]},
                          Rect{er[0], er[1], er[2], er[3]});
    } catch (const std::invalid_argument& e) {
        throw ConfigError(c.at("grid.nx").line, e.what());
    }

    std::vector<double> bps = c.numbers_or("beta.breakpoints");
    std::vector<double> slopes =
        c.has("beta.slopes") ? c.numbers("beta.slopes") : std::vector<double>{0.0, 1.0};
    const double b0 = c.number_or("beta.value_at_zero", 0.0);
    const double delta = c.number_or("beta.delta", 0.25);
    if (!c.has("beta.breakpoints") && !c.has("beta.slopes")) bps = {0.0};  // default max(0,.)

    const double eps = c.number("problem.epsilon");

    ProblemParams p{grid,
                    PiecewiseLinearBeta(bps, slopes, b0, delta),
                    eps,
                    c.number_or("problem.alpha", 0.0),
                    c.number_or("problem.s", 0.5),
                    c.field_or("problem.f", grid, eps, 0.0),
                    c.field_or("problem.y_d", grid, eps, 0.0),
                    c.field_or("problem.g_sh", grid, eps, 0.0),
                    SolverOpts{c.number_or("solver.tol", 1e-10),
                               static_cast<int>(c.integer_or("solver.max_iter", 50)), 1e-4}};
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(c.at("problem.epsilon").line, e.what());
    }
    return p;
}

/// Default gamma schedule: geometric with ratio 1/2 from 1e-1 to 1e-4.
inline std::vector<double> default_gamma_schedule() {
    std::vector<double> g;
    for (double x = 1e-1; x >= 1e-4; x *= 0.5) g.push_back(x);
    return g;
}

}  // namespace nscert
