#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/data.hpp"
#include "hfl/metrics.hpp"
#include "hfl/nn.hpp"
#include "hfl/transport.hpp"

// The hierarchical training protocol: a three-tier topology with failover,
// unweighted mean aggregation at the edge and global tiers, the synchronous
// per-round loop (broadcast, local epochs, edge reduce, global reduce,
// evaluate), and early stopping on validation loss.
//
// Determinism contract: with fixed seeds every round is bit-reproducible
// regardless of how many worker threads train clients. Client results are
// reduced in ascending id order at both tiers, and each client's shuffle
// stream depends only on (seed, client id, absolute epoch index).
namespace hfl::fed {

// ---------------------------------------------------------------------------
// topology
// ---------------------------------------------------------------------------

enum class EdgeStatus : std::uint8_t { up = 0, down = 1 };

struct Topology {
    std::uint32_t n_clients = 0;
    std::uint32_t n_edges = 0;
    std::vector<std::uint32_t> assignment;  // client -> edge
    std::vector<EdgeStatus> edge_status;

    std::vector<std::uint32_t> clients_of(std::uint32_t edge) const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t c = 0; c < n_clients; ++c)
            if (assignment[c] == edge) out.push_back(c);
        return out;
    }

    std::vector<std::uint32_t> up_edges() const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t e = 0; e < n_edges; ++e)
            if (edge_status[e] == EdgeStatus::up) out.push_back(e);
        return out;
    }

    void validate() const {
        if (n_clients < 1 || n_edges < 1) throw ConfigError("topology needs clients and edges");
        if (assignment.size() != n_clients || edge_status.size() != n_edges)
            throw ConfigError("topology arrays inconsistent");
        if (up_edges().empty()) throw ConfigError("no edge available");
        for (std::uint32_t c = 0; c < n_clients; ++c) {
            if (assignment[c] >= n_edges)
                throw ConfigError("client " + std::to_string(c) + " assigned to missing edge");
            if (edge_status[assignment[c]] != EdgeStatus::up)
                throw ConfigError("client " + std::to_string(c) + " assigned to a down edge");
        }
    }
};

inline Topology build_topology(std::uint32_t n_clients, std::uint32_t n_edges) {
    if (n_clients < 1) throw ConfigError("build_topology: need at least one client");
    if (n_edges < 1) throw ConfigError("build_topology: need at least one edge");
    Topology t;
    t.n_clients = n_clients;
    t.n_edges = n_edges;
    t.assignment.resize(n_clients);
    for (std::uint32_t c = 0; c < n_clients; ++c) t.assignment[c] = c % n_edges;
    t.edge_status.assign(n_edges, EdgeStatus::up);
    return t;
}

// Marks the edge down and deals its clients, in ascending client id, over
// the remaining up edges in ascending edge id.
inline Topology handle_edge_failure(const Topology& topo, std::uint32_t failed_edge) {
    if (failed_edge >= topo.n_edges)
        throw ConfigError("handle_edge_failure: edge " + std::to_string(failed_edge) +
                          " does not exist");
    Topology out = topo;
    out.edge_status[failed_edge] = EdgeStatus::down;
    const auto up = out.up_edges();
    if (up.empty()) throw Error("no edge available");
    std::size_t next = 0;
    for (std::uint32_t c = 0; c < out.n_clients; ++c) {
        if (out.assignment[c] != failed_edge) continue;
        out.assignment[c] = up[next % up.size()];
        ++next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

namespace detail {

inline nn::ParamVector mean_of(std::span<const nn::ParamVector> params, const char* who) {
    if (params.empty()) throw Error(std::string(who) + ": empty parameter list");
    const auto& first = params.front();
    for (const auto& p : params) {
        if (p.layout_digest != first.layout_digest)
            throw ShapeError(std::string(who) + ": layout digest mismatch");
        if (p.values.size() != first.values.size())
            throw ShapeError(std::string(who) + ": length mismatch");
    }
    nn::ParamVector out;
    out.layout_digest = first.layout_digest;
    out.values.resize(first.values.size());
    const double inv = 1.0 / static_cast<double>(params.size());
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        double acc = 0.0;
        for (const auto& p : params) acc += static_cast<double>(p.values[i]);
        out.values[i] = static_cast<float>(acc * inv);
    }
    return out;
}

}  // namespace detail

// Elementwise unweighted mean of the clients reporting to one edge, summed
// in 64-bit in the order given (callers pass ascending client id).
inline nn::ParamVector edge_aggregate(std::span<const nn::ParamVector> client_params) {
    return detail::mean_of(client_params, "edge_aggregate");
}

// Unweighted mean over edge aggregates. Equal-size edge groups make this the
// flat client mean; unequal groups deliberately do not.
inline nn::ParamVector global_aggregate(std::span<const nn::ParamVector> edge_params) {
    return detail::mean_of(edge_params, "global_aggregate");
}

// Optional client-count weighting at the global step (off by default
// everywhere; kept for comparison runs).
inline nn::ParamVector global_aggregate_weighted(std::span<const nn::ParamVector> edge_params,
                                                 std::span<const std::uint64_t> client_counts) {
    if (edge_params.empty()) throw Error("global_aggregate_weighted: empty parameter list");
    if (edge_params.size() != client_counts.size())
        throw ShapeError("global_aggregate_weighted: weight count mismatch");
    const auto& first = edge_params.front();
    nn::ParamVector out;
    out.layout_digest = first.layout_digest;
    out.values.resize(first.values.size());
    double total = 0.0;
    for (const auto w : client_counts) total += static_cast<double>(w);
    if (total == 0.0) throw Error("global_aggregate_weighted: zero total weight");
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        double acc = 0.0;
        for (std::size_t e = 0; e < edge_params.size(); ++e) {
            if (edge_params[e].layout_digest != first.layout_digest)
                throw ShapeError("global_aggregate_weighted: layout digest mismatch");
            acc += static_cast<double>(client_counts[e]) *
                   static_cast<double>(edge_params[e].values[i]);
        }
        out.values[i] = static_cast<float>(acc / total);
    }
    return out;
}

// ---------------------------------------------------------------------------
// early stopping
// ---------------------------------------------------------------------------

struct EarlyStopConfig {
    std::uint32_t patience = 5;
    double min_delta = 1e-4;

    void validate() const {
        if (patience < 1) throw ConfigError("early stop patience must be >= 1");
        if (min_delta < 0.0) throw ConfigError("early stop min_delta must be >= 0");
    }
};

// Stop once validation loss has gone `patience` consecutive rounds without
// improving on the running best by more than min_delta.
inline bool early_stop_check(std::span<const double> val_losses, const EarlyStopConfig& cfg) {
    cfg.validate();
    if (val_losses.empty()) throw Error("early_stop_check: empty history");
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t stall = 0;
    for (const double loss : val_losses) {
        if (loss < best - cfg.min_delta)
            stall = 0;
        else
            ++stall;
        best = std::min(best, loss);
    }
    return stall >= cfg.patience;
}

// ---------------------------------------------------------------------------
// rounds
// ---------------------------------------------------------------------------

struct RoundRecord {
    std::uint32_t round = 0;
    double val_loss = 0.0;
    metrics::MetricsReport eval;        // global model on the evaluation set
    std::vector<double> client_losses;  // mean training loss per client
    double seconds = 0.0;               // wall clock, excluded from determinism
};

using RoundHistory = std::vector<RoundRecord>;

struct RoundState {
    std::uint32_t round_index = 0;
    nn::ParamVector global_params;
    std::map<std::uint32_t, nn::ParamVector> per_client_params;  // last local params
    RoundHistory history;
};

struct RoundContext {
    const nn::Model* template_model = nullptr;  // architecture donor for set_params
    std::span<const std::uint64_t> client_seeds;
    const data::Dataset* validation = nullptr;
    const data::Dataset* evaluation = nullptr;
    unsigned threads = 0;  // 0 = hardware concurrency
    bool weighted_aggregation = false;
};

// One synchronous round: broadcast global parameters, train every client for
// e local epochs (in parallel, bounded by ctx.threads), reduce per edge,
// reduce globally, evaluate, append to history. Every parameter exchange
// crosses the wire codec so format bugs cannot hide in simulation mode.
inline void run_round(RoundState& state, const Topology& topo,
                      std::span<const data::Dataset> shards, const nn::Hyperparams& hp,
                      const RoundContext& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    topo.validate();
    hp.validate();
    if (shards.size() != topo.n_clients)
        throw ConfigError("run_round: " + std::to_string(shards.size()) + " shards for " +
                          std::to_string(topo.n_clients) + " clients");
    if (ctx.client_seeds.size() != topo.n_clients)
        throw ConfigError("run_round: client seed count mismatch");
    if (!ctx.template_model || !ctx.validation || !ctx.evaluation)
        throw ConfigError("run_round: incomplete context");

    const std::uint32_t n = topo.n_clients;
    const std::uint64_t epoch_offset =
        static_cast<std::uint64_t>(state.round_index) * hp.local_epochs;

    std::vector<std::unique_ptr<transport::FrameChannel>> edge_inbox;
    for (std::uint32_t e = 0; e < topo.n_edges; ++e)
        edge_inbox.push_back(std::make_unique<transport::FrameChannel>());
    transport::FrameChannel global_inbox;

    // client tier
    std::vector<double> client_loss(n, 0.0);
    std::vector<nn::ParamVector> client_params(n);
    std::vector<std::exception_ptr> failures(n);
    std::atomic<std::uint32_t> cursor{0};
    auto client_task = [&](std::uint32_t c) {
        nn::Model local = nn::set_params(*ctx.template_model, state.global_params);
        auto trained = nn::train_epochs(local, shards[c], hp, ctx.client_seeds[c], epoch_offset);
        double sum = 0.0;
        for (const double l : trained.epoch_losses) sum += l;
        client_loss[c] = sum / static_cast<double>(trained.epoch_losses.size());
        client_params[c] = nn::get_params(trained.model);
        edge_inbox[topo.assignment[c]]->send(transport::encode(transport::make_message(
            transport::Role::client, c, state.round_index, client_params[c])));
    };
    auto worker = [&] {
        while (true) {
            const std::uint32_t c = cursor.fetch_add(1);
            if (c >= n) break;
            try {
                client_task(c);
            } catch (...) {
                failures[c] = std::current_exception();
            }
        }
    };
    unsigned n_workers = ctx.threads ? ctx.threads : std::thread::hardware_concurrency();
    n_workers = std::max(1U, std::min<unsigned>(n_workers, n));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (std::uint32_t c = 0; c < n; ++c) {
        if (!failures[c]) continue;
        try {
            std::rethrow_exception(failures[c]);
        } catch (const DivergedError& e) {
            throw DivergedError("round " + std::to_string(state.round_index) + ", client " +
                                std::to_string(c) + ": " + e.what());
        } catch (const Error& e) {
            throw Error("round " + std::to_string(state.round_index) + ", client " +
                        std::to_string(c) + ": " + e.what());
        }
    }

    const std::size_t expected_len = ctx.template_model->n_params();
    auto decode_checked = [&](std::vector<std::uint8_t> frame) {
        transport::ParameterMessage msg = transport::decode(frame);
        if (msg.values.size() != expected_len)
            throw ShapeError("message length " + std::to_string(msg.values.size()) +
                             " does not match model (" + std::to_string(expected_len) + ")");
        if (msg.round != state.round_index)
            throw Error("message from round " + std::to_string(msg.round) + " during round " +
                        std::to_string(state.round_index));
        return msg;
    };

    // edge tier, ascending edge id
    std::vector<nn::ParamVector> edge_results;
    std::vector<std::uint64_t> edge_weights;
    for (const std::uint32_t e : topo.up_edges()) {
        const auto members = topo.clients_of(e);
        if (members.empty()) {
            std::cerr << "warning: edge " << e << " has no clients, excluded from global mean\n";
            continue;
        }
        std::vector<transport::ParameterMessage> msgs;
        msgs.reserve(members.size());
        for (std::size_t k = 0; k < members.size(); ++k)
            msgs.push_back(decode_checked(edge_inbox[e]->recv()));
        std::sort(msgs.begin(), msgs.end(),
                  [](const auto& a, const auto& b) { return a.sender_id < b.sender_id; });
        std::vector<nn::ParamVector> contributions;
        contributions.reserve(msgs.size());
        for (auto& m : msgs)
            contributions.push_back(
                nn::ParamVector{std::move(m.values), state.global_params.layout_digest});
        nn::ParamVector agg = edge_aggregate(contributions);
        global_inbox.send(
            transport::encode(transport::make_message(transport::Role::edge, e,
                                                      state.round_index, agg)));
        edge_weights.push_back(members.size());
    }
    if (edge_weights.empty()) throw Error("run_round: no edge produced an aggregate");

    // global tier, ascending edge id
    std::vector<transport::ParameterMessage> edge_msgs;
    for (std::size_t k = 0; k < edge_weights.size(); ++k)
        edge_msgs.push_back(decode_checked(global_inbox.recv()));
    std::sort(edge_msgs.begin(), edge_msgs.end(),
              [](const auto& a, const auto& b) { return a.sender_id < b.sender_id; });
    edge_results.reserve(edge_msgs.size());
    for (auto& m : edge_msgs)
        edge_results.push_back(
            nn::ParamVector{std::move(m.values), state.global_params.layout_digest});
    state.global_params = ctx.weighted_aggregation
                              ? global_aggregate_weighted(edge_results, edge_weights)
                              : global_aggregate(edge_results);
    for (std::uint32_t c = 0; c < n; ++c) state.per_client_params[c] = std::move(client_params[c]);

    // evaluation
    const nn::Model global_model = nn::set_params(*ctx.template_model, state.global_params);
    RoundRecord rec;
    rec.round = state.round_index;
    rec.val_loss = nn::dataset_loss(global_model, *ctx.validation);
    rec.eval = metrics::evaluate(global_model, *ctx.evaluation, hp.classification_threshold);
    rec.client_losses.assign(client_loss.begin(), client_loss.end());
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(std::move(rec));
    state.round_index += 1;
}

// ---------------------------------------------------------------------------
// full training loop
// ---------------------------------------------------------------------------

struct RunConfig {
    nn::Arch arch;
    nn::Hyperparams hp;
    std::uint32_t itrs = 50;
    bool early_stop_enabled = true;
    EarlyStopConfig early_stop;
    std::uint64_t seed_model = 0;
    std::uint64_t seed_shuffle = 0;
    bool weighted_aggregation = false;
    unsigned threads = 0;
};

struct FederationData {
    std::vector<data::Dataset> shards;
    data::Dataset validation;
    data::Dataset evaluation;
};

struct TrainOutcome {
    nn::Model model;  // checkpoint of the best-validation-loss round
    RoundHistory history;
    std::uint32_t best_round = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

// Runs up to cfg.itrs rounds (or until early stopping fires) and returns the
// global model checkpointed at the best validation loss.
inline TrainOutcome run_training(const RunConfig& cfg, const Topology& topo,
                                 const FederationData& data) {
    cfg.hp.validate();
    topo.validate();
    if (data.shards.size() != topo.n_clients)
        throw ConfigError("run_training: shard count does not match topology");
    for (const auto& s : data.shards)
        if (s.n() == 0) throw DataError("run_training: empty client shard");

    const nn::Model template_model = nn::init_model(cfg.arch, cfg.seed_model);

    RoundState state;
    state.global_params = nn::get_params(template_model);

    std::vector<std::uint64_t> client_seeds(topo.n_clients);
    for (std::uint32_t c = 0; c < topo.n_clients; ++c)
        client_seeds[c] = mix_seed(cfg.seed_shuffle, c);

    RoundContext ctx;
    ctx.template_model = &template_model;
    ctx.client_seeds = client_seeds;
    ctx.validation = &data.validation;
    ctx.evaluation = &data.evaluation;
    ctx.threads = cfg.threads;
    ctx.weighted_aggregation = cfg.weighted_aggregation;

    TrainOutcome out;
    nn::ParamVector best_params = state.global_params;
    std::vector<double> val_losses;
    for (std::uint32_t r = 0; r < cfg.itrs; ++r) {
        run_round(state, topo, data.shards, cfg.hp, ctx);
        const RoundRecord& rec = state.history.back();
        val_losses.push_back(rec.val_loss);
        if (rec.val_loss < out.best_val_loss) {
            out.best_val_loss = rec.val_loss;
            out.best_round = r;
            best_params = state.global_params;
        }
        if (cfg.early_stop_enabled && early_stop_check(val_losses, cfg.early_stop)) break;
    }
    out.history = std::move(state.history);
    out.model = out.history.empty() ? template_model : nn::set_params(template_model, best_params);
    return out;
}

}  // namespace hfl::fed
