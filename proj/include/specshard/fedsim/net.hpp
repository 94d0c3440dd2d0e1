#pragma once

// Small MLP with optionally factorized hidden layers.  A factorized slot
// holds a shard (sqrt(lambda)-absorbed factor columns plus frozen
// multipliers) and trains U', V' while omega stays fixed; the effective
// weight is  W_hat = U' diag(omega) V'^T  and the factor gradients are
//
//   dL/dU' = (dL/dW_hat) V' diag(omega)
//   dL/dV' = (dL/dW_hat)^T U' diag(omega)
//
// evaluated without materializing dL/dW_hat.  The Frobenius-decay penalty
// fd * |W_hat|_F^2 flows through the same chain.  Hidden activations are
// tanh, the head is linear; losses are mean squared error (regression) and
// mean softmax cross-entropy (classification).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "specshard/error.hpp"
#include "specshard/fedsim/task.hpp"
#include "specshard/matrix.hpp"
#include "specshard/rng.hpp"
#include "specshard/shard.hpp"

namespace specshard::fedsim {

struct Layer {
    Matrix w; // out x in
    std::vector<double> b;
};

struct ServerModel {
    std::vector<Layer> layers;
};

inline ServerModel init_model(const TaskConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim == 0) throw ValidationError("init_model: input_dim must be positive");
    std::vector<std::size_t> dims;
    dims.push_back(cfg.input_dim);
    for (std::size_t h : cfg.hidden_dims) {
        if (h == 0) throw ValidationError("init_model: hidden dims must be positive");
        dims.push_back(h);
    }
    dims.push_back(cfg.model_output_dim());
    if (dims.size() < 4)
        throw ValidationError("init_model: need at least two hidden layers so one factorizable layer exists");

    RngStream rng = RngStream::derive(seed, {stream_purpose::init});
    ServerModel m;
    m.layers.resize(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer& layer = m.layers[l];
        layer.w = Matrix(dims[l + 1], dims[l]);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (double& x : layer.w.data()) x = scale * rng.normal();
        layer.b.assign(dims[l + 1], 0.0);
    }
    return m;
}

// interior layers only; the first and last are never decomposed
inline std::vector<std::size_t> factorizable_layers(const ServerModel& m) {
    std::vector<std::size_t> out;
    for (std::size_t l = 1; l + 1 < m.layers.size(); ++l) out.push_back(l);
    return out;
}

struct LocalHyper {
    double lr0 = 0.1;
    std::size_t local_epochs = 2;
    std::size_t batch_size = 32;
    double momentum = 0.9;
    double frobenius_decay = 1e-4;
    double tau = 10.0; // per-column gradient clip threshold against omega
};

// cosine annealing from lr0 to 0 across total steps
inline double cosine_lr(double lr0, std::size_t step, std::size_t total) {
    if (total == 0) throw ValidationError("cosine_lr: total steps must be positive");
    if (step > total) throw ValidationError("cosine_lr: step beyond schedule");
    constexpr double pi = 3.14159265358979323846;
    return lr0 * 0.5 * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total)));
}

struct ClientSlot {
    bool factorized = false;
    Matrix w;    // full slot
    Shard shard; // factorized slot
    std::vector<double> b;
};

struct ClientNet {
    TaskKind kind = TaskKind::classification;
    std::vector<ClientSlot> slots;
};

// shards[l] == nullptr keeps layer l full
inline ClientNet client_net_from(const ServerModel& m, TaskKind kind,
                                 const std::vector<const Shard*>& shards) {
    if (shards.size() != m.layers.size())
        throw ValidationError("client_net_from: shard list must match layer count");
    ClientNet net;
    net.kind = kind;
    net.slots.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        ClientSlot& slot = net.slots[l];
        slot.b = m.layers[l].b;
        if (shards[l]) {
            slot.factorized = true;
            slot.shard = *shards[l];
        } else {
            slot.w = m.layers[l].w;
        }
    }
    return net;
}

struct SlotGrad {
    Matrix gw;
    Matrix gu, gv;
    std::vector<double> gb;
};

namespace detail {

inline void scale_columns(Matrix& m, const std::vector<double>& s) {
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) *= s[c];
}

inline Matrix slot_forward(const ClientSlot& slot, const Matrix& x) {
    Matrix z;
    if (slot.factorized) {
        Matrix p = matmul(x, slot.shard.v); // batch x terms
        scale_columns(p, slot.shard.omega);
        z = matmul_nt(p, slot.shard.u); // batch x out
    } else {
        z = matmul_nt(x, slot.w);
    }
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += slot.b[c];
    return z;
}

// mean softmax cross-entropy and its logit gradient
inline double softmax_ce(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits,
                         double* accuracy) {
    const std::size_t batch = logits.rows(), classes = logits.cols();
    double loss = 0.0;
    std::size_t correct = 0;
    if (dlogits) *dlogits = Matrix(batch, classes);
    for (std::size_t r = 0; r < batch; ++r) {
        double peak = logits(r, 0);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (logits(r, c) > peak) {
                peak = logits(r, c);
                arg = c;
            }
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) denom += std::exp(logits(r, c) - peak);
        const int label = labels[r];
        loss += std::log(denom) - (logits(r, label) - peak);
        if (arg == static_cast<std::size_t>(label)) ++correct;
        if (dlogits) {
            for (std::size_t c = 0; c < classes; ++c) {
                const double soft = std::exp(logits(r, c) - peak) / denom;
                (*dlogits)(r, c) =
                    (soft - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) / static_cast<double>(batch);
            }
        }
    }
    if (accuracy) *accuracy = static_cast<double>(correct) / static_cast<double>(batch);
    return loss / static_cast<double>(batch);
}

// mean squared error summed over output dims and its gradient
inline double squared_loss(const Matrix& z, const Matrix& y, Matrix* dz) {
    double loss = 0.0;
    if (dz) *dz = Matrix(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t c = 0; c < z.cols(); ++c) {
            const double d = z(r, c) - y(r, c);
            loss += d * d;
            if (dz) (*dz)(r, c) = 2.0 * d / static_cast<double>(z.rows());
        }
    return loss / static_cast<double>(z.rows());
}

} // namespace detail

// Forward pass, loss (data term plus Frobenius decay on factorized slots),
// and, when grads is non-null, gradients for every parameter.
inline double loss_and_gradients(const ClientNet& net, const Matrix& x, const Matrix& y,
                                 const std::vector<int>& labels, double frobenius_decay,
                                 std::vector<SlotGrad>* grads, double* accuracy = nullptr) {
    const std::size_t depth = net.slots.size();
    std::vector<Matrix> acts(depth + 1); // acts[0] = input, acts[i] = output of slot i-1
    acts[0] = x;
    for (std::size_t l = 0; l < depth; ++l) {
        Matrix z = detail::slot_forward(net.slots[l], acts[l]);
        if (l + 1 < depth)
            for (double& v : z.data()) v = std::tanh(v);
        acts[l + 1] = std::move(z);
    }

    Matrix delta;
    double loss = net.kind == TaskKind::classification
                      ? detail::softmax_ce(acts[depth], labels, grads ? &delta : nullptr, accuracy)
                      : detail::squared_loss(acts[depth], y, grads ? &delta : nullptr);

    // decay applies to the factorized effective weights only
    for (std::size_t l = 0; l < depth; ++l) {
        const ClientSlot& slot = net.slots[l];
        if (!slot.factorized || frobenius_decay == 0.0) continue;
        const Matrix uu = matmul_tn(slot.shard.u, slot.shard.u);
        const Matrix vv = matmul_tn(slot.shard.v, slot.shard.v);
        const auto& omega = slot.shard.omega;
        double norm_sq = 0.0;
        for (std::size_t a = 0; a < omega.size(); ++a)
            for (std::size_t b = 0; b < omega.size(); ++b)
                norm_sq += omega[a] * uu(a, b) * omega[b] * vv(b, a);
        loss += frobenius_decay * norm_sq;
    }
    if (!grads) return loss;

    grads->assign(depth, SlotGrad{});
    for (std::size_t l = depth; l-- > 0;) {
        const ClientSlot& slot = net.slots[l];
        SlotGrad& g = (*grads)[l];
        const Matrix& input = acts[l];

        g.gb.assign(delta.cols(), 0.0);
        for (std::size_t r = 0; r < delta.rows(); ++r)
            for (std::size_t c = 0; c < delta.cols(); ++c) g.gb[c] += delta(r, c);

        Matrix delta_prev;
        if (slot.factorized) {
            const Shard& s = slot.shard;
            Matrix p = matmul(input, s.v); // batch x terms
            detail::scale_columns(p, s.omega);
            g.gu = matmul_tn(delta, p); // out x terms
            Matrix t = matmul(delta, s.u); // batch x terms
            detail::scale_columns(t, s.omega);
            g.gv = matmul_tn(input, t);   // in x terms
            delta_prev = matmul_nt(t, s.v); // batch x in
            if (frobenius_decay != 0.0) {
                const Matrix uu = matmul_tn(s.u, s.u);
                const Matrix vv = matmul_tn(s.v, s.v);
                const std::size_t terms = s.omega.size();
                Matrix su(terms, terms), sv(terms, terms);
                for (std::size_t a = 0; a < terms; ++a)
                    for (std::size_t b = 0; b < terms; ++b) {
                        su(a, b) = s.omega[a] * vv(a, b) * s.omega[b];
                        sv(a, b) = s.omega[a] * uu(a, b) * s.omega[b];
                    }
                add_scaled(g.gu, 2.0 * frobenius_decay, matmul(s.u, su));
                add_scaled(g.gv, 2.0 * frobenius_decay, matmul(s.v, sv));
            }
        } else {
            g.gw = matmul_tn(delta, input); // out x in
            delta_prev = matmul(delta, slot.w);
        }
        if (l > 0) {
            for (std::size_t r = 0; r < delta_prev.rows(); ++r)
                for (std::size_t c = 0; c < delta_prev.cols(); ++c) {
                    const double h = acts[l](r, c);
                    delta_prev(r, c) *= 1.0 - h * h;
                }
            delta = std::move(delta_prev);
        }
    }
    return loss;
}

struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t round = 0;
    std::uint64_t client = 0;
};

// Minibatch SGD with classical momentum.  Optimizer state starts at zero on
// every call (it is not carried across rounds).  Factor gradients are scaled
// per column by min(1, tau / omega_i) before the momentum update; omega is
// never trained.
inline void local_train(ClientNet& net, const ClientData& data, const LocalHyper& hp, double lr,
                        const StreamKey& key) {
    const std::size_t samples = data.size();
    if (samples == 0) throw ValidationError("local_train: empty client dataset");
    if (hp.batch_size == 0) throw ValidationError("local_train: batch size must be positive");
    if (hp.tau < 1.0) throw ValidationError("local_train: tau must satisfy tau >= 1");

    const std::size_t depth = net.slots.size();
    std::vector<SlotGrad> vel(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        const ClientSlot& slot = net.slots[l];
        vel[l].gb.assign(slot.b.size(), 0.0);
        if (slot.factorized) {
            vel[l].gu = Matrix(slot.shard.u.rows(), slot.shard.u.cols());
            vel[l].gv = Matrix(slot.shard.v.rows(), slot.shard.v.cols());
        } else {
            vel[l].gw = Matrix(slot.w.rows(), slot.w.cols());
        }
    }

    std::vector<std::size_t> order(samples);
    std::vector<SlotGrad> grads;
    for (std::size_t epoch = 0; epoch < hp.local_epochs; ++epoch) {
        for (std::size_t i = 0; i < samples; ++i) order[i] = i;
        RngStream shuffle_rng = RngStream::derive(
            key.seed, {key.round, key.client, stream_purpose::batch_order, epoch});
        shuffle_rng.shuffle(order);

        for (std::size_t start = 0; start < samples; start += hp.batch_size) {
            const std::size_t stop = std::min(samples, start + hp.batch_size);
            const std::size_t batch = stop - start;
            Matrix x(batch, data.x.cols());
            Matrix y;
            std::vector<int> labels;
            if (net.kind == TaskKind::classification) {
                labels.resize(batch);
            } else {
                y = Matrix(batch, data.y.cols());
            }
            for (std::size_t r = 0; r < batch; ++r) {
                const std::size_t src = order[start + r];
                for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = data.x(src, c);
                if (net.kind == TaskKind::classification)
                    labels[r] = data.labels[src];
                else
                    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) = data.y(src, c);
            }

            loss_and_gradients(net, x, y, labels, hp.frobenius_decay, &grads);

            for (std::size_t l = 0; l < depth; ++l) {
                ClientSlot& slot = net.slots[l];
                SlotGrad& g = grads[l];
                SlotGrad& m = vel[l];
                if (slot.factorized) {
                    for (std::size_t c = 0; c < slot.shard.omega.size(); ++c) {
                        const double clip = std::min(1.0, hp.tau / slot.shard.omega[c]);
                        if (clip == 1.0) continue;
                        for (std::size_t r = 0; r < g.gu.rows(); ++r) g.gu(r, c) *= clip;
                        for (std::size_t r = 0; r < g.gv.rows(); ++r) g.gv(r, c) *= clip;
                    }
                    for (std::size_t i = 0; i < m.gu.size(); ++i) {
                        m.gu.data()[i] = hp.momentum * m.gu.data()[i] + g.gu.data()[i];
                        slot.shard.u.data()[i] -= lr * m.gu.data()[i];
                    }
                    for (std::size_t i = 0; i < m.gv.size(); ++i) {
                        m.gv.data()[i] = hp.momentum * m.gv.data()[i] + g.gv.data()[i];
                        slot.shard.v.data()[i] -= lr * m.gv.data()[i];
                    }
                } else {
                    for (std::size_t i = 0; i < m.gw.size(); ++i) {
                        m.gw.data()[i] = hp.momentum * m.gw.data()[i] + g.gw.data()[i];
                        slot.w.data()[i] -= lr * m.gw.data()[i];
                    }
                }
                for (std::size_t i = 0; i < m.gb.size(); ++i) {
                    m.gb[i] = hp.momentum * m.gb[i] + g.gb[i];
                    slot.b[i] -= lr * m.gb[i];
                }
            }
        }
    }
}

// Single factorized layer under squared loss; the building block the round
// logic composes, exposed on its own for direct use and testing.
inline void local_train_factorized(Shard& shard, std::vector<double>& bias, const ClientData& data,
                                   const LocalHyper& hp, double lr, const StreamKey& key) {
    ClientNet net;
    net.kind = TaskKind::regression;
    net.slots.resize(1);
    net.slots[0].factorized = true;
    net.slots[0].shard = shard;
    net.slots[0].b = bias;
    local_train(net, data, hp, lr, key);
    shard = std::move(net.slots[0].shard);
    bias = std::move(net.slots[0].b);
}

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalResult evaluate_model(const ServerModel& m, TaskKind kind, const Matrix& x,
                                 const Matrix& y, const std::vector<int>& labels) {
    ClientNet net;
    net.kind = kind;
    net.slots.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        net.slots[l].w = m.layers[l].w;
        net.slots[l].b = m.layers[l].b;
    }
    EvalResult r;
    r.loss = loss_and_gradients(net, x, y, labels, 0.0, nullptr, &r.accuracy);
    return r;
}

inline std::vector<double> flatten_params(const ServerModel& m) {
    std::vector<double> out;
    for (const Layer& layer : m.layers) {
        out.insert(out.end(), layer.w.data().begin(), layer.w.data().end());
        out.insert(out.end(), layer.b.begin(), layer.b.end());
    }
    return out;
}

// cosine of the angle between two update vectors; zero when either is zero
inline double update_cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("update_cosine_similarity: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace specshard::fedsim
