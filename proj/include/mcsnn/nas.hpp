#ifndef MCSNN_NAS_HPP
#define MCSNN_NAS_HPP

// Grammar-driven architecture search. A genotype is a list of hidden blocks
// plus one output and one learning block; each block is a derivation tree of
// the grammar that records the production chosen at every nonterminal and
// the values drawn for every parameter terminal.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mcsnn/error.hpp"
#include "mcsnn/network.hpp"
#include "mcsnn/random.hpp"

namespace mcsnn {

// ---------------------------------------------------------------------------
// Grammar

struct ParamTerminal {
    std::string name;
    bool is_float = false;
    int count = 1;
    double min = 0.0;
    double max = 0.0;
    bool operator==(const ParamTerminal&) const = default;
};

struct GrammarSymbol {
    enum class Kind { nonterminal, literal, parameter };
    Kind kind = Kind::literal;
    std::string text; // nonterminal name or literal token
    ParamTerminal param;
    bool operator==(const GrammarSymbol&) const = default;
};

using Production = std::vector<GrammarSymbol>;

struct Grammar {
    std::map<std::string, std::vector<Production>> rules;
    /// Rule names in file order.
    std::vector<std::string> order;

    const std::vector<Production>& productions(const std::string& nt) const {
        auto it = rules.find(nt);
        if (it == rules.end()) throw ValidationError("grammar has no rule <" + nt + ">");
        return it->second;
    }
    bool has(const std::string& nt) const { return rules.count(nt) != 0; }
};

namespace detail {

inline std::string trim_copy(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

[[noreturn]] inline void grammar_error(int line, const std::string& msg) {
    throw ValidationError("grammar syntax error on line " + std::to_string(line) + ": " + msg);
}

inline ParamTerminal parse_param(const std::string& body, int line) {
    std::vector<std::string> f;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(trim_copy(item));
    if (f.size() != 5) grammar_error(line, "parameter terminal needs [name,type,count,min,max]");
    ParamTerminal p;
    p.name = f[0];
    if (p.name.empty()) grammar_error(line, "parameter terminal has an empty name");
    if (f[1] == "float") p.is_float = true;
    else if (f[1] != "int") grammar_error(line, "parameter type must be int or float, got '" + f[1] + "'");
    try {
        std::size_t used = 0;
        p.count = std::stoi(f[2], &used);
        if (used != f[2].size()) throw std::invalid_argument("count");
        p.min = std::stod(f[3], &used);
        if (used != f[3].size()) throw std::invalid_argument("min");
        p.max = std::stod(f[4], &used);
        if (used != f[4].size()) throw std::invalid_argument("max");
    } catch (const std::logic_error&) {
        grammar_error(line, "malformed number in parameter terminal [" + body + "]");
    }
    if (p.count < 1) grammar_error(line, "parameter count must be at least 1");
    if (p.min > p.max) grammar_error(line, "parameter '" + p.name + "' has min > max");
    if (!p.is_float && (p.min != std::floor(p.min) || p.max != std::floor(p.max)))
        grammar_error(line, "int parameter '" + p.name + "' needs integer bounds");
    return p;
}

struct RawRule {
    std::string name;
    int line = 0;
    // (text, line) fragments of the right-hand side
    std::vector<std::pair<std::string, int>> body;
};

/// Splits a right-hand side into alternatives of symbols.
inline std::vector<Production> parse_alternatives(const RawRule& rule,
                                                  std::vector<std::pair<std::string, int>>& references) {
    std::vector<Production> alts(1);
    for (const auto& [text, line] : rule.body) {
        std::size_t i = 0;
        while (i < text.size()) {
            const char c = text[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
            } else if (c == '|') {
                if (alts.back().empty()) grammar_error(line, "empty alternative in <" + rule.name + ">");
                alts.emplace_back();
                ++i;
            } else if (c == '<') {
                const auto close = text.find('>', i);
                if (close == std::string::npos) grammar_error(line, "unterminated nonterminal");
                const auto name = trim_copy(std::string_view(text).substr(i + 1, close - i - 1));
                if (name.empty()) grammar_error(line, "empty nonterminal name");
                GrammarSymbol s;
                s.kind = GrammarSymbol::Kind::nonterminal;
                s.text = name;
                alts.back().push_back(s);
                references.emplace_back(name, line);
                i = close + 1;
            } else if (c == '[') {
                const auto close = text.find(']', i);
                if (close == std::string::npos) grammar_error(line, "unterminated parameter terminal");
                GrammarSymbol s;
                s.kind = GrammarSymbol::Kind::parameter;
                s.param = parse_param(text.substr(i + 1, close - i - 1), line);
                s.text = s.param.name;
                alts.back().push_back(s);
                i = close + 1;
            } else if (c == ']' || c == '>') {
                grammar_error(line, std::string("unexpected '") + c + "'");
            } else {
                std::size_t j = i;
                while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != '<' &&
                       text[j] != '[' && text[j] != '|')
                    ++j;
                GrammarSymbol s;
                s.kind = GrammarSymbol::Kind::literal;
                s.text = text.substr(i, j - i);
                if (s.text.find(':') == std::string::npos || s.text.front() == ':' || s.text.back() == ':')
                    grammar_error(line, "literal '" + s.text + "' is not of the form key:value");
                alts.back().push_back(s);
                i = j;
            }
        }
    }
    if (alts.back().empty()) grammar_error(rule.line, "rule <" + rule.name + "> has an empty alternative");
    return alts;
}

} // namespace detail

/// Parses `<nt> ::= alternatives`; a line without `::=` continues the
/// previous rule, `#` starts a comment line.
inline Grammar parse_grammar(const std::string& text) {
    std::vector<detail::RawRule> raw;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = detail::trim_copy(line);
        if (t.empty() || t.front() == '#') continue;
        const auto def = t.find("::=");
        if (def != std::string::npos) {
            const auto lhs = detail::trim_copy(std::string_view(t).substr(0, def));
            if (lhs.size() < 3 || lhs.front() != '<' || lhs.back() != '>')
                detail::grammar_error(line_no, "left-hand side must be a single <nonterminal>");
            detail::RawRule r;
            r.name = detail::trim_copy(std::string_view(lhs).substr(1, lhs.size() - 2));
            if (r.name.empty() || r.name.find_first_of("<> ") != std::string::npos)
                detail::grammar_error(line_no, "malformed nonterminal name '" + lhs + "'");
            r.line = line_no;
            r.body.emplace_back(t.substr(def + 3), line_no);
            raw.push_back(std::move(r));
        } else {
            if (raw.empty()) detail::grammar_error(line_no, "continuation line before any rule");
            raw.back().body.emplace_back(t, line_no);
        }
    }
    if (raw.empty()) throw ValidationError("grammar is empty");
    Grammar g;
    std::vector<std::pair<std::string, int>> refs;
    for (const auto& r : raw) {
        if (g.has(r.name)) detail::grammar_error(r.line, "duplicate rule <" + r.name + ">");
        g.rules[r.name] = detail::parse_alternatives(r, refs);
        g.order.push_back(r.name);
    }
    for (const auto& [name, ref_line] : refs)
        if (!g.has(name))
            throw ValidationError("dangling nonterminal <" + name + "> referenced on line " + std::to_string(ref_line));
    return g;
}

inline Grammar load_grammar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("input file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_grammar(ss.str());
}

/// The QMCLeaky search space.
inline const char* qmcleaky_grammar_text() {
    return R"(<features> ::= <fully-connected>
               <activation_cl>
<beta>     ::= [beta,float,1,0,1]
<threshold>::= [threshold,float,1,0.1,10]
<sur_grad_slope>::=[grad_slope,int,1,1,30]
<classification> ::=<fully-connected>
                    <activation_cl>
                   |<dropout>
<dropout>::=layer:dropout[rate,float,1,0,0.5]
<fully-connected>::=layer:qfc
                    [num-units,int,1,16,1024]
                    <q_bits>
<output> ::= <fully-last> <activation_final>
<activation_cl>::=layer:act <beta><threshold>
                  <neuron_cl><sur_grad_slope>
<neuron_cl>       ::=neuron:QMCLeaky
<activation_final>::=layer:act <beta>
                     <threshold> <neuron_cl>
                     <sur_grad_slope>
<fully-last>::=layer:qfc num-units:2 <q_bits>
<q_bits>   ::= [q_bits,int,1,4,32]
<learning> ::= <adam>
<adam>     ::= learning:adam
               [lr,float,1,0.001,0.1]
)";
}

/// Same space with float dense layers and the trainable MCLeaky neuron.
inline const char* mcleaky_grammar_text() {
    return R"(<features> ::= <fully-connected>
               <activation_cl>
<beta>     ::= [beta,float,1,0,1]
<threshold>::= [threshold,float,1,0.1,10]
<sur_grad_slope>::=[grad_slope,int,1,1,30]
<classification> ::=<fully-connected>
                    <activation_cl>
                   |<dropout>
<dropout>::=layer:dropout[rate,float,1,0,0.5]
<fully-connected>::=layer:fc
                    [num-units,int,1,16,1024]
<output> ::= <fully-last> <activation_final>
<activation_cl>::=layer:act <beta><threshold>
                  <neuron_cl><sur_grad_slope>
<neuron_cl>       ::=neuron:MCLeaky
<activation_final>::=layer:act <beta>
                     <threshold> <neuron_cl>
                     <sur_grad_slope>
<fully-last>::=layer:fc num-units:2
<learning> ::= <adam>
<adam>     ::= learning:adam
               [lr,float,1,0.001,0.1]
)";
}

inline Grammar grammar_preset(std::string_view name) {
    if (name == "qmcleaky") return parse_grammar(qmcleaky_grammar_text());
    if (name == "mcleaky") return parse_grammar(mcleaky_grammar_text());
    throw ValidationError("unknown grammar preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Genotypes

struct DerivationNode {
    std::string symbol;
    int production = 0;
    /// Values of each parameter terminal of the production, in order.
    std::vector<std::vector<double>> params;
    /// Expansions of each nonterminal of the production, in order.
    std::vector<DerivationNode> children;
    bool operator==(const DerivationNode&) const = default;
};

struct MacroStructure {
    std::string hidden = "classification";
    std::string output = "output";
    std::string learning = "learning";
    std::size_t min_blocks = 1;
    std::size_t max_blocks = 4;
};

struct Genotype {
    std::vector<DerivationNode> blocks;
    DerivationNode output;
    DerivationNode learning;
    bool operator==(const Genotype&) const = default;
};

struct Individual {
    std::uint64_t id = 0;
    Genotype genotype;
    std::optional<double> fitness;
    std::optional<NetworkSpec> phenotype;
};

struct EvoConfig {
    std::size_t generations = 16;
    std::size_t parents = 16;
    std::size_t offspring = 16;
    double add_layer = 0.15;
    double reuse_layer = 0.15;
    double remove_layer = 0.25;
    double dsge_mutation = 0.15;
    double macro_mutation = 0.3;
    std::size_t train_epochs = 3;
    std::size_t batch_size = 24;
    std::size_t t_steps = 25;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    MacroStructure macro;

    void validate() const {
        for (double r : {add_layer, reuse_layer, remove_layer, dsge_mutation, macro_mutation})
            require(r >= 0.0 && r <= 1.0, "mutation rates must lie in [0,1]");
        require(parents >= 1, "at least one parent is needed");
        require(train_epochs >= 1 && batch_size >= 1 && t_steps >= 1, "candidate training needs positive budgets");
        require(jobs >= 1, "jobs must be at least 1");
        require(macro.min_blocks >= 1 && macro.min_blocks <= macro.max_blocks, "invalid hidden block bounds");
    }
};

namespace detail {

inline double sample_value(const ParamTerminal& p, Rng& rng) {
    if (p.is_float) return uniform(rng, p.min, p.max);
    return static_cast<double>(uniform_int(rng, static_cast<long long>(p.min), static_cast<long long>(p.max)));
}

inline DerivationNode expand(const Grammar& g, const std::string& symbol, Rng& rng, int depth = 0) {
    if (depth > 64) throw ValidationError("grammar recursion too deep while expanding <" + symbol + ">");
    const auto& prods = g.productions(symbol);
    DerivationNode n;
    n.symbol = symbol;
    n.production = static_cast<int>(uniform_int(rng, 0, static_cast<long long>(prods.size()) - 1));
    for (const auto& s : prods[static_cast<std::size_t>(n.production)]) {
        if (s.kind == GrammarSymbol::Kind::parameter) {
            std::vector<double> v;
            for (int k = 0; k < s.param.count; ++k) v.push_back(sample_value(s.param, rng));
            n.params.push_back(std::move(v));
        } else if (s.kind == GrammarSymbol::Kind::nonterminal) {
            n.children.push_back(expand(g, s.text, rng, depth + 1));
        }
    }
    return n;
}

inline void inconsistent(const std::string& msg) { throw ValidationError("inconsistent genotype: " + msg); }

/// Emits the literal and parameter tokens of a derivation, checking it
/// against the grammar.
inline void flatten(const Grammar& g, const DerivationNode& n, std::vector<std::pair<std::string, double>>& out) {
    if (!g.has(n.symbol)) inconsistent("unknown nonterminal <" + n.symbol + ">");
    const auto& prods = g.productions(n.symbol);
    if (n.production < 0 || static_cast<std::size_t>(n.production) >= prods.size())
        inconsistent("production index out of range for <" + n.symbol + ">");
    std::size_t pi = 0, ci = 0;
    for (const auto& s : prods[static_cast<std::size_t>(n.production)]) {
        switch (s.kind) {
        case GrammarSymbol::Kind::literal: out.emplace_back(s.text, std::nan("")); break;
        case GrammarSymbol::Kind::parameter: {
            if (pi >= n.params.size()) inconsistent("missing values for parameter '" + s.param.name + "'");
            const auto& vals = n.params[pi++];
            if (vals.size() != static_cast<std::size_t>(s.param.count))
                inconsistent("wrong value count for parameter '" + s.param.name + "'");
            for (double v : vals) {
                if (!(v >= s.param.min && v <= s.param.max))
                    inconsistent("parameter '" + s.param.name + "' outside its bounds");
                out.emplace_back("=" + s.param.name, v);
            }
            break;
        }
        case GrammarSymbol::Kind::nonterminal:
            if (ci >= n.children.size() || n.children[ci].symbol != s.text)
                inconsistent("expansion of <" + n.symbol + "> does not match its production");
            flatten(g, n.children[ci++], out);
            break;
        }
    }
    if (pi != n.params.size() || ci != n.children.size()) inconsistent("extra values under <" + n.symbol + ">");
}

inline LayerKind layer_from_token(const std::string& v) {
    if (v == "qfc") return LayerKind::qdense;
    if (v == "fc") return LayerKind::dense;
    if (v == "act") return LayerKind::activation;
    if (v == "dropout") return LayerKind::dropout;
    if (v == "slstm") return LayerKind::slstm;
    inconsistent("unknown layer type '" + v + "'");
    return LayerKind::dense;
}

inline std::size_t to_count(double v) { return static_cast<std::size_t>(std::llround(v)); }

} // namespace detail

inline Individual random_individual(const Grammar& g, const EvoConfig& cfg, Rng& rng) {
    Individual ind;
    const auto n = static_cast<std::size_t>(uniform_int(rng, static_cast<long long>(cfg.macro.min_blocks),
                                                        static_cast<long long>(cfg.macro.max_blocks)));
    for (std::size_t i = 0; i < n; ++i) ind.genotype.blocks.push_back(detail::expand(g, cfg.macro.hidden, rng));
    ind.genotype.output = detail::expand(g, cfg.macro.output, rng);
    ind.genotype.learning = detail::expand(g, cfg.macro.learning, rng);
    return ind;
}

/// Expands the genotype to tokens and materializes the network.
inline NetworkSpec decode(const Genotype& geno, const Grammar& g, std::size_t input_dim, std::size_t t_steps = 25,
                          LossKind loss = LossKind::ce_rate) {
    std::vector<std::pair<std::string, double>> tokens;
    for (const auto& b : geno.blocks) detail::flatten(g, b, tokens);
    detail::flatten(g, geno.output, tokens);
    detail::flatten(g, geno.learning, tokens);

    NetworkSpec spec;
    spec.input_dim = input_dim;
    spec.t_steps = t_steps;
    spec.loss = loss;
    bool in_learning = false;
    bool have_lr = false;
    LayerSpec* cur = nullptr;
    for (const auto& [tok, value] : tokens) {
        if (tok.front() == '=') {
            const auto name = tok.substr(1);
            if (in_learning) {
                if (name != "lr") detail::inconsistent("unknown learning parameter '" + name + "'");
                spec.learning_rate = value;
                have_lr = true;
                continue;
            }
            if (!cur) detail::inconsistent("parameter '" + name + "' before any layer");
            if (name == "num-units") cur->units = detail::to_count(value);
            else if (name == "q_bits") cur->quant_bits = static_cast<int>(std::llround(value));
            else if (name == "beta") cur->neuron.beta = value;
            else if (name == "alpha") cur->neuron.alpha = value;
            else if (name == "threshold") cur->neuron.threshold = value;
            else if (name == "grad_slope") cur->neuron.slope = static_cast<int>(std::llround(value));
            else if (name == "rate") cur->dropout = value;
            else detail::inconsistent("unknown layer parameter '" + name + "'");
            continue;
        }
        const auto colon = tok.find(':');
        const auto key = tok.substr(0, colon);
        const auto val = tok.substr(colon + 1);
        if (key == "layer") {
            LayerSpec l;
            l.kind = detail::layer_from_token(val);
            spec.layers.push_back(l);
            cur = &spec.layers.back();
            in_learning = false;
        } else if (key == "learning") {
            if (val != "adam") detail::inconsistent("unknown optimizer '" + val + "'");
            in_learning = true;
            cur = nullptr;
        } else if (key == "neuron") {
            if (!cur) detail::inconsistent("neuron before any layer");
            cur->neuron.kind = parse_neuron_kind(val);
        } else if (key == "num-units") {
            if (!cur) detail::inconsistent("num-units before any layer");
            cur->units = std::stoul(val);
        } else {
            detail::inconsistent("unknown token '" + tok + "'");
        }
    }
    if (!have_lr) detail::inconsistent("no learning rate");
    validate(spec);
    return spec;
}

inline NetworkSpec decode(const Individual& ind, const Grammar& g, std::size_t input_dim, std::size_t t_steps = 25,
                          LossKind loss = LossKind::ce_rate) {
    return decode(ind.genotype, g, input_dim, t_steps, loss);
}

namespace detail {

/// Every parameter-value slot of a tree as (terminal, value&).
inline void collect_params(const Grammar& g, DerivationNode& n,
                           std::vector<std::pair<const ParamTerminal*, double*>>& out) {
    const auto& prod = g.productions(n.symbol)[static_cast<std::size_t>(n.production)];
    std::size_t pi = 0, ci = 0;
    for (const auto& s : prod) {
        if (s.kind == GrammarSymbol::Kind::parameter) {
            for (auto& v : n.params[pi]) out.emplace_back(&s.param, &v);
            ++pi;
        } else if (s.kind == GrammarSymbol::Kind::nonterminal) {
            collect_params(g, n.children[ci++], out);
        }
    }
}

/// Nodes whose nonterminal has more than one production.
inline void collect_choices(const Grammar& g, DerivationNode& n, std::vector<DerivationNode*>& out) {
    if (g.productions(n.symbol).size() > 1) out.push_back(&n);
    for (auto& c : n.children) collect_choices(g, c, out);
}

inline void mutate_unit(const Grammar& g, DerivationNode& unit, const EvoConfig& cfg, Rng& rng) {
    if (uniform01(rng) < cfg.dsge_mutation) {
        std::vector<std::pair<const ParamTerminal*, double*>> slots;
        collect_params(g, unit, slots);
        if (!slots.empty()) {
            auto [p, v] = slots[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(slots.size()) - 1))];
            if (p->is_float) *v = std::clamp(*v + gaussian(rng, 0.0, 0.1 * (p->max - p->min)), p->min, p->max);
            else *v = sample_value(*p, rng);
        }
    }
    if (uniform01(rng) < cfg.macro_mutation) {
        std::vector<DerivationNode*> choices;
        collect_choices(g, unit, choices);
        if (!choices.empty()) {
            auto* node = choices[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(choices.size()) - 1))];
            *node = expand(g, node->symbol, rng);
        }
    }
}

} // namespace detail

inline Individual mutate(const Individual& parent, const Grammar& g, const EvoConfig& cfg, Rng& rng) {
    Individual child;
    child.id = parent.id;
    child.genotype = parent.genotype;
    auto& blocks = child.genotype.blocks;
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(n) - 1)); };
    if (uniform01(rng) < cfg.add_layer && blocks.size() < cfg.macro.max_blocks) {
        const auto pos = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(blocks.size())));
        blocks.insert(blocks.begin() + static_cast<std::ptrdiff_t>(pos), detail::expand(g, cfg.macro.hidden, rng));
    }
    if (uniform01(rng) < cfg.reuse_layer && blocks.size() < cfg.macro.max_blocks && !blocks.empty()) {
        const auto src = pick(blocks.size());
        const auto pos = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(blocks.size())));
        const auto copy = blocks[src];
        blocks.insert(blocks.begin() + static_cast<std::ptrdiff_t>(pos), copy);
    }
    if (uniform01(rng) < cfg.remove_layer && blocks.size() > cfg.macro.min_blocks)
        blocks.erase(blocks.begin() + static_cast<std::ptrdiff_t>(pick(blocks.size())));
    for (auto& b : blocks) detail::mutate_unit(g, b, cfg, rng);
    detail::mutate_unit(g, child.genotype.output, cfg, rng);
    detail::mutate_unit(g, child.genotype.learning, cfg, rng);
    return child;
}

/// One-point crossover with a shared cut c in [0, min(|a|,|b|)]: the child
/// takes a's blocks before c and b's blocks from c on, plus b's output and
/// learning units, so it has |b| blocks.
inline Individual crossover(const Individual& a, const Individual& b, Rng& rng) {
    const auto na = a.genotype.blocks.size(), nb = b.genotype.blocks.size();
    const auto cut = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(std::min(na, nb))));
    Individual child;
    child.id = a.id;
    child.genotype.blocks.assign(a.genotype.blocks.begin(), a.genotype.blocks.begin() + static_cast<std::ptrdiff_t>(cut));
    child.genotype.blocks.insert(child.genotype.blocks.end(), b.genotype.blocks.begin() + static_cast<std::ptrdiff_t>(cut),
                                 b.genotype.blocks.end());
    child.genotype.output = b.genotype.output;
    child.genotype.learning = b.genotype.learning;
    return child;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const DerivationNode& n) {
    nlohmann::json children = nlohmann::json::array();
    for (const auto& c : n.children) children.push_back(to_json(c));
    return {{"symbol", n.symbol}, {"production", n.production}, {"params", n.params}, {"children", children}};
}

inline DerivationNode derivation_from_json(const nlohmann::json& j) {
    DerivationNode n;
    n.symbol = j.at("symbol").get<std::string>();
    n.production = j.at("production").get<int>();
    n.params = j.at("params").get<std::vector<std::vector<double>>>();
    for (const auto& c : j.at("children")) n.children.push_back(derivation_from_json(c));
    return n;
}

inline nlohmann::json to_json(const Genotype& g) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : g.blocks) blocks.push_back(to_json(b));
    return {{"blocks", blocks}, {"output", to_json(g.output)}, {"learning", to_json(g.learning)}};
}

inline Genotype genotype_from_json(const nlohmann::json& j) {
    Genotype g;
    for (const auto& b : j.at("blocks")) g.blocks.push_back(derivation_from_json(b));
    g.output = derivation_from_json(j.at("output"));
    g.learning = derivation_from_json(j.at("learning"));
    return g;
}

// ---------------------------------------------------------------------------
// Search

struct GenerationRecord {
    std::size_t generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    std::uint64_t best_genotype_id = 0;
};

struct ArchiveEntry {
    std::uint64_t id = 0;
    std::size_t generation = 0;
    double fitness = 0.0;
    Genotype genotype;
    NetworkSpec phenotype;
};

struct EvolutionResult {
    Individual best;
    std::vector<GenerationRecord> history;
    std::vector<ArchiveEntry> archive;
    std::size_t evaluations = 0;
};

/// Trains a decoded candidate for cfg.train_epochs with the CE-rate loss and
/// returns its test accuracy; divergence scores 0.
inline double candidate_fitness(const NetworkSpec& spec, const SplitDataset& data, const EvoConfig& cfg,
                                std::uint64_t id) {
    TrainConfig tc;
    tc.epochs = cfg.train_epochs;
    tc.batch_size = cfg.batch_size;
    tc.seed = derive_seed(cfg.seed, {0xFE, id});
    tc.eval_each_epoch = false;
    try {
        const auto model = bptt_train(spec, data, tc);
        return model.history.empty() ? 0.0 : model.history.back().test_acc;
    } catch (const DivergenceError&) {
        return 0.0;
    }
}

namespace detail {

/// Evaluates every individual without fitness, `jobs` at a time; results do
/// not depend on the number of workers.
inline void evaluate_population(std::vector<Individual>& pop, const Grammar& g, const SplitDataset& data,
                                const EvoConfig& cfg) {
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        if (pop[i].fitness) continue;
        pop[i].phenotype = decode(pop[i], g, data.train.window_len, cfg.t_steps, LossKind::ce_rate);
        todo.push_back(i);
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            const auto k = next.fetch_add(1);
            if (k >= todo.size()) return;
            auto& ind = pop[todo[k]];
            try {
                ind.fitness = candidate_fitness(*ind.phenotype, data, cfg, ind.id);
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    const auto workers = std::min(cfg.jobs, todo.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (err) std::rethrow_exception(err);
}

} // namespace detail

using GenerationCallback = std::function<void(const GenerationRecord&)>;

/// (mu + lambda) search: offspring come from crossover of two uniformly drawn
/// parents followed by mutation; survivors are the best `parents` of parents
/// and offspring (ties favour older individuals), so the best never degrades.
inline EvolutionResult evolve(const Grammar& g, const SplitDataset& data, const EvoConfig& cfg,
                              const GenerationCallback& on_generation = {}) {
    cfg.validate();
    require(!data.train.empty() && !data.test.empty(), "evolution needs a train and a test split");
    EvolutionResult res;
    std::uint64_t next_id = 0;
    Rng rng(derive_seed(cfg.seed, {0xE7}));

    std::vector<Individual> pop;
    for (std::size_t i = 0; i < cfg.parents; ++i) {
        auto ind = random_individual(g, cfg, rng);
        ind.id = next_id++;
        pop.push_back(std::move(ind));
    }

    auto archive = [&](const std::vector<Individual>& inds, std::size_t gen) {
        for (const auto& ind : inds)
            res.archive.push_back({ind.id, gen, *ind.fitness, ind.genotype, *ind.phenotype});
    };
    auto record = [&](std::size_t gen) {
        GenerationRecord r;
        r.generation = gen;
        r.best_fitness = *pop.front().fitness;
        r.best_genotype_id = pop.front().id;
        double sum = 0.0;
        for (const auto& ind : pop) sum += *ind.fitness;
        r.mean_fitness = sum / static_cast<double>(pop.size());
        res.history.push_back(r);
        if (on_generation) on_generation(r);
    };
    auto select = [&](std::vector<Individual> all) {
        std::stable_sort(all.begin(), all.end(),
                         [](const Individual& a, const Individual& b) { return *a.fitness > *b.fitness; });
        all.resize(std::min(all.size(), cfg.parents));
        return all;
    };

    detail::evaluate_population(pop, g, data, cfg);
    res.evaluations += pop.size();
    archive(pop, 0);
    pop = select(std::move(pop));
    record(0);

    for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
        std::vector<Individual> kids;
        for (std::size_t k = 0; k < cfg.offspring; ++k) {
            const auto& a = pop[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(pop.size()) - 1))];
            const auto& b = pop[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(pop.size()) - 1))];
            auto child = mutate(crossover(a, b, rng), g, cfg, rng);
            child.id = next_id++;
            child.fitness.reset();
            child.phenotype.reset();
            kids.push_back(std::move(child));
        }
        detail::evaluate_population(kids, g, data, cfg);
        res.evaluations += kids.size();
        archive(kids, gen);
        std::vector<Individual> all = pop;
        all.insert(all.end(), kids.begin(), kids.end());
        pop = select(std::move(all));
        record(gen);
    }
    res.best = pop.front();
    return res;
}

inline std::string evolution_log_csv(const std::vector<GenerationRecord>& history) {
    std::ostringstream os;
    os << "generation,best_fitness,mean_fitness,best_genotype_id\n";
    for (const auto& r : history)
        os << r.generation << ',' << r.best_fitness << ',' << r.mean_fitness << ',' << r.best_genotype_id << '\n';
    return os.str();
}

inline nlohmann::json archive_json(const std::vector<ArchiveEntry>& archive) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : archive)
        out.push_back({{"id", e.id},
                       {"generation", e.generation},
                       {"fitness", e.fitness},
                       {"genotype", to_json(e.genotype)},
                       {"phenotype", to_json(e.phenotype)}});
    return out;
}

} // namespace mcsnn

#endif
