#pragma once

// Experiment configuration.  The on-disk format is sectioned key-value text:
//
//   # comment (also ';'); full-line comments only
//   seed = 7
//   strategy = collective
//   keep_ratio_groups = {0.2: 0.6, 0.4: 0.4}
//   emit = round, lr, loss
//
//   [task]
//   kind = classification
//   hidden_dims = 32, 32
//
// Every key has a default, so the empty file is a valid config.  Unknown
// keys and sections are rejected with the offending line number.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "specshard/designs.hpp"
#include "specshard/error.hpp"
#include "specshard/fedsim/net.hpp"
#include "specshard/fedsim/task.hpp"
#include "specshard/plans.hpp"

namespace specshard {

struct GroupSpec {
    double keep_ratio = 0.0;
    double fraction = 0.0;
};

inline const std::vector<std::string>& emit_field_names() {
    static const std::vector<std::string> names = {"round", "lr",   "loss", "accuracy",
                                                   "disc",  "anme", "cosine", "wall"};
    return names;
}

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::size_t rounds = 200;
    std::size_t clients = 10;
    std::size_t participants_per_round = 10;
    fedsim::LocalHyper hyper;
    double svd_tol = 1e-12;
    Strategy strategy = Strategy::collective;
    DesignKind design = DesignKind::cps;
    std::vector<GroupSpec> groups{{0.2, 1.0}};
    std::size_t prism_marginal_trials = 100000;
    fedsim::TaskConfig task;
    std::vector<std::string> emit{"round", "lr", "loss", "accuracy", "disc", "anme"};

    bool emits(const std::string& field) const {
        for (const auto& f : emit)
            if (f == field) return true;
        return false;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] inline void config_fail(std::size_t line, const std::string& message) {
    throw ValidationError("config line " + std::to_string(line) + ": " + message);
}

inline double parse_real(const std::string& value, std::size_t line, const std::string& key) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        config_fail(line, key + ": expected a number, got '" + value + "'");
    }
    if (used != value.size()) config_fail(line, key + ": trailing characters in '" + value + "'");
    return out;
}

inline std::uint64_t parse_count(const std::string& value, std::size_t line, const std::string& key) {
    if (value.empty() || value[0] == '-')
        config_fail(line, key + ": expected a non-negative integer, got '" + value + "'");
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
        out = std::stoull(value, &used);
    } catch (const std::exception&) {
        config_fail(line, key + ": expected a non-negative integer, got '" + value + "'");
    }
    if (used != value.size()) config_fail(line, key + ": trailing characters in '" + value + "'");
    return out;
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    if (!value.empty() && value.back() == ',') out.emplace_back();
    return out;
}

// "{ratio: fraction, ratio: fraction}"
inline std::vector<GroupSpec> parse_groups(const std::string& value, std::size_t line) {
    const std::string body = trim(value);
    if (body.size() < 2 || body.front() != '{' || body.back() != '}')
        config_fail(line, "keep_ratio_groups: expected {ratio: fraction, ...}");
    std::vector<GroupSpec> groups;
    for (const std::string& pair : split_list(body.substr(1, body.size() - 2))) {
        if (pair.empty()) config_fail(line, "keep_ratio_groups: empty entry");
        const std::size_t colon = pair.find(':');
        if (colon == std::string::npos)
            config_fail(line, "keep_ratio_groups: entry '" + pair + "' lacks a ':'");
        GroupSpec g;
        g.keep_ratio = parse_real(trim(pair.substr(0, colon)), line, "keep_ratio_groups ratio");
        g.fraction = parse_real(trim(pair.substr(colon + 1)), line, "keep_ratio_groups fraction");
        groups.push_back(g);
    }
    if (groups.empty()) config_fail(line, "keep_ratio_groups: at least one group required");
    return groups;
}

} // namespace detail

// Post-parse constraint checks; messages name the violated constraint.
inline void validate_config(const ExperimentConfig& cfg) {
    const auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    if (cfg.rounds == 0) fail("rounds must satisfy rounds >= 1");
    if (cfg.clients == 0) fail("clients must satisfy clients >= 1");
    if (cfg.participants_per_round == 0 || cfg.participants_per_round > cfg.clients)
        fail("participants_per_round must satisfy 1 <= participants_per_round <= clients");
    if (!(cfg.hyper.lr0 > 0.0)) fail("lr0 must be positive");
    if (!(cfg.hyper.momentum >= 0.0) || cfg.hyper.momentum >= 1.0)
        fail("momentum must lie in [0, 1)");
    if (!(cfg.hyper.frobenius_decay >= 0.0)) fail("frobenius_decay must be non-negative");
    if (!(cfg.hyper.tau >= 1.0)) fail("tau must satisfy tau >= 1");
    if (cfg.hyper.batch_size == 0) fail("batch_size must satisfy batch_size >= 1");
    if (!(cfg.svd_tol >= 0.0)) fail("svd_tol must be non-negative");
    if (cfg.prism_marginal_trials == 0) fail("prism_marginal_trials must satisfy >= 1");

    double fraction_total = 0.0;
    for (std::size_t i = 0; i < cfg.groups.size(); ++i) {
        const GroupSpec& g = cfg.groups[i];
        if (!(g.keep_ratio > 0.0) || g.keep_ratio > 1.0)
            fail("keep_ratio_groups ratios must lie in (0, 1]");
        if (!(g.fraction > 0.0)) fail("keep_ratio_groups fractions must be positive");
        if (i > 0 && g.keep_ratio <= cfg.groups[i - 1].keep_ratio)
            fail("keep_ratio_groups ratios must be distinct");
        fraction_total += g.fraction;
    }
    if (std::abs(fraction_total - 1.0) > 1e-9) fail("keep_ratio_groups fractions must sum to 1");

    if (cfg.task.input_dim == 0) fail("task input_dim must satisfy input_dim >= 1");
    if (cfg.task.hidden_dims.size() < 2 || cfg.task.hidden_dims.size() > 4)
        fail("task hidden_dims must list 2 to 4 layers (1 to 3 factorizable)");
    for (std::size_t h : cfg.task.hidden_dims)
        if (h == 0) fail("task hidden_dims entries must be positive");
    if (cfg.task.kind == fedsim::TaskKind::classification && cfg.task.n_classes < 2)
        fail("task n_classes must satisfy n_classes >= 2");
    if (cfg.task.kind == fedsim::TaskKind::regression && cfg.task.output_dim == 0)
        fail("task output_dim must satisfy output_dim >= 1");
    if (cfg.task.samples_per_client == 0)
        fail("task samples_per_client must satisfy samples_per_client >= 1");
    if (!(cfg.task.dirichlet_alpha > 0.0)) fail("task dirichlet_alpha must be positive");

    if (cfg.emit.empty()) fail("emit must list at least one field");
    for (const std::string& field : cfg.emit) {
        bool known = false;
        for (const std::string& name : emit_field_names()) known = known || name == field;
        if (!known) fail("emit: unknown field '" + field + "'");
    }
}

inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string section;
    std::string raw;
    std::size_t line_no = 0;
    std::vector<std::string> seen;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') detail::config_fail(line_no, "unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "task")
                detail::config_fail(line_no, "unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) detail::config_fail(line_no, "expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) detail::config_fail(line_no, "empty key");
        const std::string qualified = section.empty() ? key : section + "." + key;
        for (const std::string& s : seen)
            if (s == qualified) detail::config_fail(line_no, "duplicate key '" + qualified + "'");
        seen.push_back(qualified);

        if (section.empty()) {
            if (key == "seed")
                cfg.seed = detail::parse_count(value, line_no, key);
            else if (key == "rounds")
                cfg.rounds = detail::parse_count(value, line_no, key);
            else if (key == "clients")
                cfg.clients = detail::parse_count(value, line_no, key);
            else if (key == "participants_per_round")
                cfg.participants_per_round = detail::parse_count(value, line_no, key);
            else if (key == "local_epochs")
                cfg.hyper.local_epochs = detail::parse_count(value, line_no, key);
            else if (key == "batch_size")
                cfg.hyper.batch_size = detail::parse_count(value, line_no, key);
            else if (key == "lr0")
                cfg.hyper.lr0 = detail::parse_real(value, line_no, key);
            else if (key == "momentum")
                cfg.hyper.momentum = detail::parse_real(value, line_no, key);
            else if (key == "frobenius_decay")
                cfg.hyper.frobenius_decay = detail::parse_real(value, line_no, key);
            else if (key == "tau")
                cfg.hyper.tau = detail::parse_real(value, line_no, key);
            else if (key == "svd_tol")
                cfg.svd_tol = detail::parse_real(value, line_no, key);
            else if (key == "prism_marginal_trials")
                cfg.prism_marginal_trials = detail::parse_count(value, line_no, key);
            else if (key == "strategy") {
                const auto s = strategy_from_name(value);
                if (!s) detail::config_fail(line_no, "unknown strategy '" + value + "'");
                cfg.strategy = *s;
            } else if (key == "design") {
                const auto d = design_from_name(value);
                if (!d || *d == DesignKind::deterministic)
                    detail::config_fail(line_no, "unknown design '" + value + "'");
                cfg.design = *d;
            } else if (key == "keep_ratio_groups")
                cfg.groups = detail::parse_groups(value, line_no);
            else if (key == "emit") {
                cfg.emit.clear();
                for (const std::string& f : detail::split_list(value)) {
                    if (f.empty()) detail::config_fail(line_no, "emit: empty field name");
                    cfg.emit.push_back(f);
                }
            } else
                detail::config_fail(line_no, "unknown key '" + key + "'");
        } else { // [task]
            if (key == "kind") {
                if (value == "classification")
                    cfg.task.kind = fedsim::TaskKind::classification;
                else if (value == "regression")
                    cfg.task.kind = fedsim::TaskKind::regression;
                else
                    detail::config_fail(line_no, "task kind must be classification or regression");
            } else if (key == "input_dim")
                cfg.task.input_dim = detail::parse_count(value, line_no, key);
            else if (key == "hidden_dims") {
                cfg.task.hidden_dims.clear();
                for (const std::string& d : detail::split_list(value)) {
                    if (d.empty()) detail::config_fail(line_no, "hidden_dims: empty entry");
                    cfg.task.hidden_dims.push_back(detail::parse_count(d, line_no, key));
                }
            } else if (key == "n_classes")
                cfg.task.n_classes = detail::parse_count(value, line_no, key);
            else if (key == "output_dim")
                cfg.task.output_dim = detail::parse_count(value, line_no, key);
            else if (key == "samples_per_client")
                cfg.task.samples_per_client = detail::parse_count(value, line_no, key);
            else if (key == "dirichlet_alpha")
                cfg.task.dirichlet_alpha = detail::parse_real(value, line_no, key);
            else
                detail::config_fail(line_no, "unknown key 'task." + key + "'");
        }
    }
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path + "'");
    return parse_config(in);
}

} // namespace specshard
