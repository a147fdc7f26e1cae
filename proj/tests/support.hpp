#pragma once

// Test-side builders and oracles. Nothing here calls into the merge code:
// the oracles re-derive expected results from first principles.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "taas/occ_engine.hpp"
#include "taas/txn_model.hpp"

namespace taas::testing {

inline TaggedTxn make_txn(std::uint32_t origin, std::uint64_t seq, Timestamp ts, std::vector<ReadEntry> reads,
                          std::vector<WriteEntry> writes,
                          IsolationLevel iso = IsolationLevel::SnapshotIsolation,
                          ConsistencyMode cm = ConsistencyMode::Strong) {
    TaggedTxn t;
    t.payload.txn_id = {origin, seq};
    t.payload.isolation = iso;
    t.payload.consistency = cm;
    t.payload.reads = std::move(reads);
    t.payload.writes = std::move(writes);
    t.ts = ts;
    return t;
}

inline Timestamp ts(EpochNumber e, std::uint32_t tick, std::uint32_t node) { return {e, tick, NodeId{node}}; }

inline std::string key_name(int k) { return "k" + std::to_string(k); }

// Random epoch input: up to `nodes` members, `max_txns` txns over `keys`
// keys. Timestamps are unique per node (tick counter per node).
inline MergeInput random_merge_input(std::mt19937_64& rng, EpochNumber epoch, int nodes, int max_txns, int keys) {
    MergeInput in;
    in.epoch = epoch;
    std::vector<std::uint32_t> ticks(nodes, 0);
    for (int n = 0; n < nodes; ++n) in.per_node_batches[NodeId{static_cast<std::uint32_t>(n)}];
    int count = std::uniform_int_distribution<int>(0, max_txns)(rng);
    for (int i = 0; i < count; ++i) {
        auto node = static_cast<std::uint32_t>(std::uniform_int_distribution<int>(0, nodes - 1)(rng));
        ticks[node] += std::uniform_int_distribution<std::uint32_t>(1, 3)(rng);
        int nw = std::uniform_int_distribution<int>(0, 3)(rng);
        int nr = std::uniform_int_distribution<int>(0, 3)(rng);
        std::set<int> wk, rk;
        for (int j = 0; j < nw; ++j) wk.insert(std::uniform_int_distribution<int>(0, keys - 1)(rng));
        for (int j = 0; j < nr; ++j) rk.insert(std::uniform_int_distribution<int>(0, keys - 1)(rng));
        std::vector<WriteEntry> writes;
        for (int k : wk) {
            if (rng() % 8 == 0) {
                writes.push_back({key_name(k), std::nullopt});
            } else {
                writes.push_back({key_name(k), "v" + std::to_string(i)});
            }
        }
        std::vector<ReadEntry> reads;
        for (int k : rk) reads.push_back({key_name(k), kUnread});
        auto iso = static_cast<IsolationLevel>(rng() % 4);
        auto& batch = in.per_node_batches[NodeId{node}];
        // Rarely the same TxnId shows up twice (client re-post to another node).
        std::uint64_t seq = (i > 0 && rng() % 20 == 0) ? static_cast<std::uint64_t>(i - 1) : static_cast<std::uint64_t>(i);
        if (rng() % 25 == 0) {
            batch.early_aborts.push_back({TxnId{7, seq}, ts(epoch, ticks[node], node), AbortReason::StaleRead});
        } else {
            batch.txns.push_back(make_txn(7, seq, ts(epoch, ticks[node], node), reads, writes, iso));
        }
    }
    return in;
}

inline std::vector<NodeId> members_of(const MergeInput& in) {
    std::vector<NodeId> m;
    for (const auto& [id, _] : in.per_node_batches) m.push_back(id);
    return m;
}

// Brute-force first-writer-win: walk txns in timestamp order, commit when
// none of the write keys is claimed. Returns committed ids in order and
// aborted ids with reasons.
struct FwwOutcome {
    std::vector<TxnId> committed;
    std::map<TxnId, AbortReason> aborted;
};

inline FwwOutcome fww_oracle(const MergeInput& in) {
    struct Item {
        Timestamp ts;
        TxnId id;
        const TaggedTxn* t;
        AbortReason marker;
    };
    std::vector<Item> all;
    for (const auto& [_, b] : in.per_node_batches) {
        for (const auto& t : b.txns) all.push_back({t.ts, t.payload.txn_id, &t, AbortReason::None});
        for (const auto& m : b.early_aborts) all.push_back({m.ts, m.txn_id, nullptr, m.reason});
    }
    // Plain selection sort by (ts, id): independent of std::sort use elsewhere.
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            bool less = all[j].ts < all[i].ts || (all[j].ts == all[i].ts && all[j].id < all[i].id);
            if (less) std::swap(all[i], all[j]);
        }
    }
    FwwOutcome out;
    std::set<std::string> claimed;
    std::set<TxnId> seen;
    for (const auto& it : all) {
        if (seen.count(it.id)) continue;
        seen.insert(it.id);
        if (!it.t) {
            out.aborted[it.id] = it.marker;
            continue;
        }
        bool clash = false;
        for (const auto& w : it.t->payload.writes) clash = clash || claimed.count(w.key) > 0;
        if (clash) {
            out.aborted[it.id] = AbortReason::WriteConflictLost;
            continue;
        }
        for (const auto& w : it.t->payload.writes) claimed.insert(w.key);
        out.committed.push_back(it.id);
    }
    return out;
}

// A transaction as the serializability oracle sees it: the values it read
// (nullopt = absent) and the values it wrote.
struct ObservedTxn {
    TxnId id;
    std::map<std::string, std::optional<std::string>> reads;
    std::map<std::string, std::optional<std::string>> writes;
};

using KvState = std::map<std::string, std::optional<std::string>>;

inline std::optional<std::string> lookup(const KvState& s, const std::string& k) {
    auto it = s.find(k);
    return it == s.end() ? std::nullopt : it->second;
}

// Exhaustive search for a serial order in which every txn reads exactly what
// it observed, ending in `final_state` (checked on every key written).
inline bool serializable(const KvState& initial, std::vector<ObservedTxn> txns, const KvState& final_state) {
    std::sort(txns.begin(), txns.end(), [](const ObservedTxn& a, const ObservedTxn& b) { return a.id < b.id; });
    std::vector<std::size_t> order(txns.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    do {
        KvState s = initial;
        bool ok = true;
        for (auto i : order) {
            for (const auto& [k, v] : txns[i].reads) {
                if (lookup(s, k) != v) {
                    ok = false;
                    break;
                }
            }
            if (!ok) break;
            for (const auto& [k, v] : txns[i].writes) s[k] = v;
        }
        if (!ok) continue;
        for (const auto& [k, v] : s) {
            if (lookup(final_state, k) != v) ok = false;
        }
        if (ok) return true;
    } while (std::next_permutation(order.begin(), order.end()));
    return false;
}

// Epoch-by-epoch harness around resolve_epoch: keeps the version table, the
// value state after every epoch and the logs, so tests can stage txns that
// read a snapshot of epoch s and post in a later epoch.
class EngineHarness {
  public:
    explicit EngineHarness(int nodes = 2) : nodes_(nodes) {
        states_.push_back({});
        vts_.push_back(VersionTable{});
    }

    // Value state and version table after `epochs` epochs have been applied.
    const KvState& state_after(EpochNumber epochs) const { return states_.at(epochs); }
    const VersionTable& vt_after(EpochNumber epochs) const { return vts_.at(epochs); }
    EpochNumber applied() const { return logs_.size(); }
    const std::vector<EpochLog>& logs() const { return logs_; }

    // Read entry for `key` as seen by a reader of snapshot `epochs`.
    ReadEntry read(EpochNumber epochs, const std::string& key) const {
        return {key, vt_after(epochs).latest(key)};
    }

    EpochLog run_epoch(const std::vector<std::pair<std::uint32_t, TaggedTxn>>& per_node) {
        MergeInput in;
        in.epoch = applied();
        std::vector<NodeId> members;
        for (int n = 0; n < nodes_; ++n) {
            members.push_back(NodeId{static_cast<std::uint32_t>(n)});
            in.per_node_batches[members.back()];
        }
        for (const auto& [node, t] : per_node) in.per_node_batches[NodeId{node}].txns.push_back(t);
        auto log = resolve_epoch(in, members, vts_.back(), recent_);
        recent_.add(log);
        KvState s = states_.back();
        for (const auto& c : log.committed) {
            for (const auto& w : c.writes) s[w.key] = w.value;
        }
        states_.push_back(std::move(s));
        vts_.push_back(apply_epoch_to_version_table(vts_.back(), log));
        logs_.push_back(log);
        return log;
    }

  private:
    int nodes_;
    std::vector<KvState> states_;
    std::vector<VersionTable> vts_;
    std::vector<EpochLog> logs_;
    RecentTxnIndex recent_;
};

inline bool committed_in(const EpochLog& log, const TxnId& id) {
    return std::any_of(log.committed.begin(), log.committed.end(),
                       [&](const CommittedTxn& c) { return c.txn_id == id; });
}

inline std::optional<AbortReason> aborted_in(const EpochLog& log, const TxnId& id) {
    for (const auto& a : log.aborted) {
        if (a.txn_id == id) return a.reason;
    }
    return std::nullopt;
}

}  // namespace taas::testing
