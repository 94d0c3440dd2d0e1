#pragma once

// The federated round engine.  Each communication round:
//   1. a uniform subset of clients participates;
//   2. participants are grouped by keep ratio; per factorizable layer the
//      server decomposes the current weights and computes one inclusion
//      plan per group (collective planning sees the group's participant
//      count as C);
//   3. every participant draws its term subset under the configured
//      design, receives the sqrt(lambda)-absorbed factor columns plus
//      frozen multipliers, and trains locally;
//   4. the server aggregates factor columns per term over the clients
//      that selected that term (dataset-size weighted), leaves unselected
//      terms untouched, rebuilds W as the plain sum of outer products,
//      and averages biases and undecomposed layers over all participants.
//
// The model is re-decomposed from scratch every round.  The whole
// trajectory is a pure function of (config, seed): client participation,
// shard draws, and minibatch order all come from derived named streams.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "specshard/config.hpp"
#include "specshard/error.hpp"
#include "specshard/fedsim/net.hpp"
#include "specshard/fedsim/task.hpp"
#include "specshard/matrix.hpp"
#include "specshard/metrics.hpp"
#include "specshard/plans.hpp"
#include "specshard/rng.hpp"
#include "specshard/shard.hpp"
#include "specshard/svd.hpp"
#include "specshard/version.hpp"

namespace specshard::fedsim {

struct SimState {
    ServerModel model;
    SyntheticTask task;
    std::vector<std::size_t> client_group; // group index per client id
    Matrix eval_x;                         // pooled training features
    Matrix eval_y;
    std::vector<int> eval_labels;
};

struct RoundRecord {
    std::size_t round = 0;
    double lr = 0.0;
    double loss = 0.0;
    double accuracy = 0.0; // NaN for regression tasks
    std::vector<double> layer_disc; // per factorizable layer, participant-weighted over groups
    std::vector<double> layer_anme;
    double anme_network = 0.0;
    double cosine = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

inline SimState init_sim(const ExperimentConfig& cfg) {
    validate_config(cfg);
    SimState state;
    state.task = make_task(cfg.task, cfg.clients, cfg.seed);
    state.model = init_model(cfg.task, cfg.seed);

    // keep-ratio groups are filled in client-id order, sized by largest
    // remainder so fractions hold as closely as integers allow
    std::vector<double> fractions;
    for (const GroupSpec& g : cfg.groups) fractions.push_back(g.fraction);
    const std::vector<std::size_t> counts = detail::largest_remainder(fractions, cfg.clients);
    state.client_group.clear();
    for (std::size_t g = 0; g < counts.size(); ++g)
        state.client_group.insert(state.client_group.end(), counts[g], g);

    std::size_t total = 0;
    for (const ClientData& c : state.task.clients) total += c.size();
    state.eval_x = Matrix(total, cfg.task.input_dim);
    if (state.task.kind == TaskKind::regression) state.eval_y = Matrix(total, state.task.output_dim);
    state.eval_labels.assign(state.task.kind == TaskKind::classification ? total : 0, 0);
    std::size_t row = 0;
    for (const ClientData& c : state.task.clients) {
        for (std::size_t r = 0; r < c.size(); ++r, ++row) {
            for (std::size_t j = 0; j < state.eval_x.cols(); ++j) state.eval_x(row, j) = c.x(r, j);
            if (state.task.kind == TaskKind::classification)
                state.eval_labels[row] = c.labels[r];
            else
                for (std::size_t j = 0; j < state.eval_y.cols(); ++j) state.eval_y(row, j) = c.y(r, j);
        }
    }
    return state;
}

inline std::vector<std::size_t> sample_participants(const ExperimentConfig& cfg, std::size_t round) {
    std::vector<std::size_t> ids(cfg.clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    RngStream rng = RngStream::derive(cfg.seed, {stream_purpose::participation, round});
    rng.shuffle(ids);
    ids.resize(cfg.participants_per_round);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace detail {

// One round of plan/sample/train/aggregate applied to `model` in place.
// `ratios[k]` is the keep ratio used for participants[k]; the FedAvg
// reference passes all-ones here and is otherwise the identical
// computation (same streams, same minibatch order).  When `rec` is given,
// the per-layer plan diagnostics are filled in.
inline void apply_round(ServerModel& model, const SyntheticTask& task, const ExperimentConfig& cfg,
                        std::size_t round, const std::vector<std::size_t>& participants,
                        const std::vector<double>& ratios, double lr, RoundRecord* rec) {
    const std::size_t n_participants = participants.size();
    if (n_participants == 0) throw ValidationError("apply_round: empty round");
    const std::vector<std::size_t> fact_layers = factorizable_layers(model);

    // distinct (ratio) groups present this round, in ratio order
    std::vector<double> group_ratios;
    std::vector<std::vector<std::size_t>> group_members; // positions into participants
    for (std::size_t k = 0; k < n_participants; ++k) {
        std::size_t g = 0;
        while (g < group_ratios.size() && group_ratios[g] != ratios[k]) ++g;
        if (g == group_ratios.size()) {
            group_ratios.push_back(ratios[k]);
            group_members.emplace_back();
        }
        group_members[g].push_back(k);
    }

    PlanOptions plan_opts;
    plan_opts.prism_marginal_trials = cfg.prism_marginal_trials;

    if (rec) {
        rec->layer_disc.assign(fact_layers.size(), 0.0);
        rec->layer_anme.assign(fact_layers.size(), 0.0);
    }

    // per layer: decomposition shared by all groups, one plan per group,
    // one shard per participant
    std::vector<SpectralDecomposition> decomps(fact_layers.size());
    std::vector<std::vector<Shard>> shards(n_participants,
                                           std::vector<Shard>(fact_layers.size()));
    std::vector<std::vector<double>> anme_pis;
    std::vector<std::size_t> anme_ns;
    std::vector<double> anme_weights;
    std::vector<std::size_t> anme_layer_pos;
    for (std::size_t li = 0; li < fact_layers.size(); ++li) {
        const std::size_t layer = fact_layers[li];
        decomps[li] = decompose(model.layers[layer].w, cfg.svd_tol);
        const SpectralDecomposition& d = decomps[li];

        double disc_total = 0.0;
        for (std::size_t g = 0; g < group_ratios.size(); ++g) {
            const std::size_t group_count = group_members[g].size();
            const InclusionPlan plan =
                plan_for_keep_ratio(d, group_ratios[g], cfg.strategy, group_count, plan_opts);
            if (rec) {
                disc_total += static_cast<double>(group_count) * plan_discrepancy(d.lambda, plan);
                anme_pis.push_back(plan.pi);
                anme_ns.push_back(plan.sample_size);
                anme_weights.push_back(static_cast<double>(group_count));
                anme_layer_pos.push_back(li);
            }

            SamplingDesign design =
                (plan.strategy == Strategy::prism || plan.strategy == Strategy::prism_unbiased)
                    ? (plan.sample_size == d.terms()
                           ? SamplingDesign::from_probabilities(DesignKind::deterministic, plan.pi,
                                                                plan.sample_size)
                           : SamplingDesign::from_weights(
                                 prism_draw_weights(d.lambda, group_ratios[g]), plan.sample_size))
                    : SamplingDesign::from_probabilities(cfg.design, plan.pi, plan.sample_size);

            for (std::size_t pos : group_members[g]) {
                RngStream draw_rng = RngStream::derive(
                    cfg.seed, {stream_purpose::shard_draw, round, participants[pos], layer});
                std::vector<std::size_t> picked = design.sample(draw_rng);
                std::sort(picked.begin(), picked.end());
                shards[pos][li] = build_shard(d, picked, plan.omega, group_ratios[g]);
            }
        }
        if (rec) rec->layer_disc[li] = disc_total / static_cast<double>(n_participants);
    }

    if (rec) {
        // participant-weighted normalized entropy; groups at full keep have
        // no uniform reference and drop out of the average
        const AnmeReport report = anme(anme_pis, anme_ns);
        std::vector<double> num(fact_layers.size(), 0.0), den(fact_layers.size(), 0.0);
        for (std::size_t k = 0; k < anme_pis.size(); ++k) {
            if (!report.defined[k]) continue;
            num[anme_layer_pos[k]] += anme_weights[k] * report.per_layer[k];
            den[anme_layer_pos[k]] += anme_weights[k];
        }
        double net_total = 0.0;
        std::size_t net_count = 0;
        for (std::size_t li = 0; li < fact_layers.size(); ++li) {
            rec->layer_anme[li] = den[li] > 0.0 ? num[li] / den[li]
                                                : std::numeric_limits<double>::quiet_NaN();
            if (den[li] > 0.0) {
                net_total += rec->layer_anme[li];
                ++net_count;
            }
        }
        rec->anme_network =
            net_count ? net_total / static_cast<double>(net_count) : std::numeric_limits<double>::quiet_NaN();
    }

    // local training
    std::vector<ClientNet> nets(n_participants);
    for (std::size_t k = 0; k < n_participants; ++k) {
        std::vector<const Shard*> layer_shards(model.layers.size(), nullptr);
        for (std::size_t li = 0; li < fact_layers.size(); ++li)
            layer_shards[fact_layers[li]] = &shards[k][li];
        nets[k] = client_net_from(model, task.kind, layer_shards);
        StreamKey key{cfg.seed, round, participants[k]};
        local_train(nets[k], task.clients[participants[k]], cfg.hyper, lr, key);
    }

    // aggregation
    std::vector<double> weight(n_participants);
    double weight_total = 0.0;
    for (std::size_t k = 0; k < n_participants; ++k) {
        weight[k] = static_cast<double>(task.clients[participants[k]].size());
        weight_total += weight[k];
    }

    for (std::size_t li = 0; li < fact_layers.size(); ++li) {
        const std::size_t layer = fact_layers[li];
        const SpectralDecomposition& d = decomps[li];
        const std::size_t terms = d.terms();

        // start from the server's own sqrt(lambda)-absorbed columns
        Matrix fu(d.u.rows(), terms), fv(d.v.rows(), terms);
        for (std::size_t t = 0; t < terms; ++t) {
            const double root = std::sqrt(d.lambda[t]);
            for (std::size_t r = 0; r < fu.rows(); ++r) fu(r, t) = root * d.u(r, t);
            for (std::size_t r = 0; r < fv.rows(); ++r) fv(r, t) = root * d.v(r, t);
        }
        for (std::size_t t = 0; t < terms; ++t) {
            double selected_weight = 0.0;
            std::vector<double> ucol(fu.rows(), 0.0), vcol(fv.rows(), 0.0);
            for (std::size_t k = 0; k < n_participants; ++k) {
                const Shard& s = shards[k][li];
                const auto it = std::lower_bound(s.indices.begin(), s.indices.end(), t);
                if (it == s.indices.end() || *it != t) continue;
                const std::size_t j = static_cast<std::size_t>(it - s.indices.begin());
                const ClientNet& net = nets[k];
                const ClientSlot& slot = net.slots[layer];
                for (std::size_t r = 0; r < ucol.size(); ++r) ucol[r] += weight[k] * slot.shard.u(r, j);
                for (std::size_t r = 0; r < vcol.size(); ++r) vcol[r] += weight[k] * slot.shard.v(r, j);
                selected_weight += weight[k];
            }
            if (selected_weight == 0.0) continue; // term kept by nobody stays the server's
            for (std::size_t r = 0; r < ucol.size(); ++r) fu(r, t) = ucol[r] / selected_weight;
            for (std::size_t r = 0; r < vcol.size(); ++r) fv(r, t) = vcol[r] / selected_weight;
        }
        model.layers[layer].w = matmul_nt(fu, fv);
    }

    for (std::size_t layer = 0; layer < model.layers.size(); ++layer) {
        const bool factorized_here =
            std::find(fact_layers.begin(), fact_layers.end(), layer) != fact_layers.end();
        if (!factorized_here) {
            Matrix acc(model.layers[layer].w.rows(), model.layers[layer].w.cols());
            for (std::size_t k = 0; k < n_participants; ++k)
                add_scaled(acc, weight[k] / weight_total, nets[k].slots[layer].w);
            model.layers[layer].w = std::move(acc);
        }
        std::vector<double> bias(model.layers[layer].b.size(), 0.0);
        for (std::size_t k = 0; k < n_participants; ++k)
            for (std::size_t r = 0; r < bias.size(); ++r)
                bias[r] += weight[k] / weight_total * nets[k].slots[layer].b[r];
        model.layers[layer].b = std::move(bias);
    }
}

} // namespace detail

// Reference update direction: the identical round (same participants, same
// minibatch order) trained at keep ratio 1 with unit multipliers.  Returns
// the flattened parameter delta; does not advance the model.
inline std::vector<double> fedavg_reference_update(const ServerModel& model,
                                                   const SyntheticTask& task,
                                                   const ExperimentConfig& cfg, std::size_t round,
                                                   const std::vector<std::size_t>& participants,
                                                   double lr) {
    ServerModel ref = model;
    const std::vector<double> ones(participants.size(), 1.0);
    detail::apply_round(ref, task, cfg, round, participants, ones, lr, nullptr);
    std::vector<double> delta = flatten_params(ref);
    const std::vector<double> base = flatten_params(model);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= base[i];
    return delta;
}

inline RoundRecord run_round(SimState& state, const ExperimentConfig& cfg, std::size_t round,
                             bool compute_cosine) {
    const auto started = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = round;
    rec.lr = cosine_lr(cfg.hyper.lr0, round, cfg.rounds);

    const std::vector<std::size_t> participants = sample_participants(cfg, round);
    std::vector<double> ratios(participants.size());
    for (std::size_t k = 0; k < participants.size(); ++k)
        ratios[k] = cfg.groups[state.client_group[participants[k]]].keep_ratio;

    std::vector<double> before;
    if (compute_cosine) before = flatten_params(state.model);

    detail::apply_round(state.model, state.task, cfg, round, participants, ratios, rec.lr, &rec);

    if (compute_cosine) {
        std::vector<double> delta = flatten_params(state.model);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= before[i];
        // rebuild the pre-round parameters; the reference trains from there
        ServerModel pre = state.model;
        std::size_t cursor = 0;
        for (Layer& layer : pre.layers) {
            for (double& x : layer.w.data()) x = before[cursor++];
            for (double& x : layer.b) x = before[cursor++];
        }
        const std::vector<double> ref =
            fedavg_reference_update(pre, state.task, cfg, round, participants, rec.lr);
        rec.cosine = update_cosine_similarity(delta, ref);
    }

    const EvalResult eval = evaluate_model(state.model, state.task.kind, state.eval_x, state.eval_y,
                                           state.eval_labels);
    rec.loss = eval.loss;
    rec.accuracy = state.task.kind == TaskKind::classification
                       ? eval.accuracy
                       : std::numeric_limits<double>::quiet_NaN();
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            started)
                      .count();
    return rec;
}

// ---- CSV emission

namespace detail {

inline std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::vector<std::string> emit_columns(const ExperimentConfig& cfg,
                                             const std::vector<std::size_t>& fact_layers) {
    std::vector<std::string> cols;
    for (const std::string& field : cfg.emit) {
        if (field == "disc") {
            for (std::size_t l : fact_layers) cols.push_back("disc_l" + std::to_string(l));
        } else if (field == "anme") {
            for (std::size_t l : fact_layers) cols.push_back("anme_l" + std::to_string(l));
            cols.push_back("anme_net");
        } else if (field == "wall") {
            cols.push_back("wall_ms");
        } else {
            cols.push_back(field);
        }
    }
    return cols;
}

inline void emit_row(std::ostream& os, const ExperimentConfig& cfg, const RoundRecord& rec) {
    bool first = true;
    const auto put = [&](const std::string& s) {
        if (!first) os << ',';
        os << s;
        first = false;
    };
    for (const std::string& field : cfg.emit) {
        if (field == "round")
            put(std::to_string(rec.round));
        else if (field == "lr")
            put(format_real(rec.lr));
        else if (field == "loss")
            put(format_real(rec.loss));
        else if (field == "accuracy")
            put(format_real(rec.accuracy));
        else if (field == "disc")
            for (double d : rec.layer_disc) put(format_real(d));
        else if (field == "anme") {
            for (double a : rec.layer_anme) put(format_real(a));
            put(format_real(rec.anme_network));
        } else if (field == "cosine")
            put(format_real(rec.cosine));
        else if (field == "wall")
            put(format_real(rec.wall_ms));
    }
    os << '\n';
}

} // namespace detail

// Runs the full experiment, streaming one CSV row per round (flushed as it
// goes) plus a trailing summary comment block.  Returns all records.
inline std::vector<RoundRecord> run_simulation(const ExperimentConfig& cfg, std::ostream& os) {
    SimState state = init_sim(cfg);
    const bool want_cosine = cfg.emits("cosine");

    os << "# seed=" << cfg.seed << " version=" << version_string
       << " strategy=" << strategy_name(cfg.strategy) << " design=" << design_name(cfg.design)
       << '\n';
    const std::vector<std::size_t> fact_layers = factorizable_layers(state.model);
    const std::vector<std::string> cols = detail::emit_columns(cfg, fact_layers);
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    os.flush();

    std::vector<RoundRecord> records;
    records.reserve(cfg.rounds);
    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        records.push_back(run_round(state, cfg, round, want_cosine));
        detail::emit_row(os, cfg, records.back());
        os.flush();
    }

    const RoundRecord& first = records.front();
    const RoundRecord& last = records.back();
    os << "# summary rounds=" << cfg.rounds << " first_loss=" << detail::format_real(first.loss)
       << " final_loss=" << detail::format_real(last.loss);
    if (state.task.kind == TaskKind::classification)
        os << " final_accuracy=" << detail::format_real(last.accuracy);
    if (first.loss > 0.0)
        os << " loss_drop=" << detail::format_real((first.loss - last.loss) / first.loss);
    os << '\n';
    os.flush();
    return records;
}

} // namespace specshard::fedsim
