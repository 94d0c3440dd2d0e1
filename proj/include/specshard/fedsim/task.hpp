#pragma once

// Desk-scale synthetic tasks for the federated simulation: Gaussian cluster
// classification or a linear-teacher regression, split across clients.
// Classification splits are label-skewed: each client's class proportions are
// drawn from Dirichlet(alpha * p) around the global proportions p, and
// samples are handed out without replacement as closely as integer counts
// and supply allow.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "specshard/error.hpp"
#include "specshard/matrix.hpp"
#include "specshard/rng.hpp"

namespace specshard::fedsim {

enum class TaskKind { regression, classification };

struct TaskConfig {
    TaskKind kind = TaskKind::classification;
    std::size_t input_dim = 20;
    std::vector<std::size_t> hidden_dims = {32, 32};
    std::size_t n_classes = 4;  // classification
    std::size_t output_dim = 1; // regression
    std::size_t samples_per_client = 100;
    double dirichlet_alpha = 1.0;

    std::size_t model_output_dim() const {
        return kind == TaskKind::classification ? n_classes : output_dim;
    }
};

struct ClientData {
    Matrix x;                // samples x input_dim
    Matrix y;                // samples x output_dim (regression)
    std::vector<int> labels; // classification
    std::size_t size() const { return x.rows(); }
};

struct SyntheticTask {
    TaskKind kind = TaskKind::classification;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::size_t n_classes = 0;
    double dirichlet_alpha = 1.0;
    std::vector<ClientData> clients;
};

namespace detail {

// integer apportionment: counts sum to total, each within one of
// proportion * total
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& proportions,
                                                  std::size_t total) {
    const std::size_t k = proportions.size();
    std::vector<std::size_t> counts(k, 0);
    std::vector<std::pair<double, std::size_t>> remainders(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = proportions[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(exact);
        assigned += counts[i];
        remainders[i] = {exact - static_cast<double>(counts[i]), i};
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) counts[remainders[i % k].second]++;
    return counts;
}

} // namespace detail

// Classification pool split by Dirichlet(alpha * p) label skew.  The global
// pool holds n_clients * samples_per_client points with near-uniform class
// counts; each client requests integer per-class counts derived from its
// Dirichlet proportions and any shortfall against supply is filled from the
// classes with the most remaining stock (deterministically).
inline SyntheticTask split_dirichlet(const TaskConfig& cfg, std::size_t n_clients, double alpha,
                                     RngStream& rng) {
    if (cfg.kind != TaskKind::classification)
        throw ValidationError("split_dirichlet: task kind must be classification");
    if (n_clients == 0) throw ValidationError("split_dirichlet: need at least one client");
    if (cfg.samples_per_client == 0)
        throw ValidationError("split_dirichlet: samples_per_client must be positive");
    if (cfg.n_classes < 2) throw ValidationError("split_dirichlet: need at least two classes");
    if (!(alpha > 0.0)) throw ValidationError("split_dirichlet: alpha must be positive");
    const std::size_t total = n_clients * cfg.samples_per_client;
    if (n_clients > total) throw ValidationError("split_dirichlet: more clients than samples");

    const std::size_t k = cfg.n_classes;
    const std::vector<double> p(k, 1.0 / static_cast<double>(k));
    const std::vector<std::size_t> class_totals = detail::largest_remainder(p, total);

    // class centers and per-class sample pools
    std::vector<std::vector<double>> centers(k, std::vector<double>(cfg.input_dim));
    for (auto& c : centers)
        for (double& x : c) x = 2.0 * rng.normal();
    std::vector<Matrix> pool(k);
    for (std::size_t cls = 0; cls < k; ++cls) {
        pool[cls] = Matrix(class_totals[cls], cfg.input_dim);
        for (std::size_t s = 0; s < class_totals[cls]; ++s)
            for (std::size_t f = 0; f < cfg.input_dim; ++f)
                pool[cls](s, f) = centers[cls][f] + rng.normal();
    }

    // per-client class demand
    std::vector<double> conc(k);
    for (std::size_t c = 0; c < k; ++c) conc[c] = alpha * p[c];
    std::vector<std::vector<std::size_t>> demand(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        const std::vector<double> q = rng.dirichlet(conc);
        demand[c] = detail::largest_remainder(q, cfg.samples_per_client);
    }

    // hand out without replacement; shortfalls pull from the best-stocked class
    std::vector<std::size_t> cursor(k, 0);
    SyntheticTask task;
    task.kind = cfg.kind;
    task.input_dim = cfg.input_dim;
    task.output_dim = k;
    task.n_classes = k;
    task.dirichlet_alpha = alpha;
    task.clients.resize(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        ClientData& data = task.clients[c];
        data.x = Matrix(cfg.samples_per_client, cfg.input_dim);
        data.labels.resize(cfg.samples_per_client);
        std::size_t row = 0;
        auto take = [&](std::size_t cls) {
            for (std::size_t f = 0; f < cfg.input_dim; ++f) data.x(row, f) = pool[cls](cursor[cls], f);
            data.labels[row] = static_cast<int>(cls);
            ++cursor[cls];
            ++row;
        };
        for (std::size_t cls = 0; cls < k; ++cls) {
            const std::size_t want = demand[c][cls];
            const std::size_t avail = class_totals[cls] - cursor[cls];
            for (std::size_t i = 0; i < std::min(want, avail); ++i) take(cls);
        }
        while (row < cfg.samples_per_client) {
            std::size_t best = k;
            std::size_t best_left = 0;
            for (std::size_t cls = 0; cls < k; ++cls) {
                const std::size_t left = class_totals[cls] - cursor[cls];
                if (left > best_left) {
                    best_left = left;
                    best = cls;
                }
            }
            if (best == k) throw NumericalError("split_dirichlet: sample pool exhausted");
            take(best);
        }
    }
    return task;
}

// Regression pool: iid features, linear teacher with mild noise, split evenly.
inline SyntheticTask split_regression(const TaskConfig& cfg, std::size_t n_clients,
                                      RngStream& rng) {
    if (cfg.kind != TaskKind::regression)
        throw ValidationError("split_regression: task kind must be regression");
    if (n_clients == 0) throw ValidationError("split_regression: need at least one client");
    if (cfg.samples_per_client == 0)
        throw ValidationError("split_regression: samples_per_client must be positive");
    Matrix teacher(cfg.output_dim, cfg.input_dim);
    for (double& x : teacher.data()) x = rng.normal() / std::sqrt(static_cast<double>(cfg.input_dim));
    SyntheticTask task;
    task.kind = cfg.kind;
    task.input_dim = cfg.input_dim;
    task.output_dim = cfg.output_dim;
    task.n_classes = 0;
    task.clients.resize(n_clients);
    for (auto& data : task.clients) {
        data.x = Matrix(cfg.samples_per_client, cfg.input_dim);
        data.y = Matrix(cfg.samples_per_client, cfg.output_dim);
        for (std::size_t s = 0; s < cfg.samples_per_client; ++s) {
            for (std::size_t f = 0; f < cfg.input_dim; ++f) data.x(s, f) = rng.normal();
            for (std::size_t o = 0; o < cfg.output_dim; ++o) {
                double v = 0.0;
                for (std::size_t f = 0; f < cfg.input_dim; ++f) v += teacher(o, f) * data.x(s, f);
                data.y(s, o) = v + 0.1 * rng.normal();
            }
        }
    }
    return task;
}

inline SyntheticTask make_task(const TaskConfig& cfg, std::size_t n_clients, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, {stream_purpose::data});
    if (cfg.kind == TaskKind::classification)
        return split_dirichlet(cfg, n_clients, cfg.dirichlet_alpha, rng);
    return split_regression(cfg, n_clients, rng);
}

} // namespace specshard::fedsim
