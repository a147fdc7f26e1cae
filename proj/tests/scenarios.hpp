#pragma once

// Randomized multi-epoch histories driven through resolve_epoch, shared by
// the unit suites and the acceptance binary.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"

namespace taas::testing {

struct StagedTxn {
    TaggedTxn txn;
    std::uint32_t node = 0;
    EpochNumber snapshot = 0;  // epochs applied when it read
    EpochNumber post = 0;      // epoch it is merged in
    ObservedTxn observed;
};

// Epoch 0 loads every key; txns then read snapshots 1 or 2 and post in the
// snapshot's epoch or the next one.
inline EngineHarness load_keys(int keys, const std::string& initial_prefix = "init") {
    EngineHarness h(2);
    std::vector<WriteEntry> writes;
    for (int k = 0; k < keys; ++k) writes.push_back({key_name(k), initial_prefix + std::to_string(k)});
    h.run_epoch({{0, make_txn(99, 0, ts(0, 0, 0), {}, writes, IsolationLevel::ReadCommitted)}});
    return h;
}

// Runs staged txns epoch by epoch. Each txn's reads are filled in from the
// harness at its snapshot before its post epoch resolves. `build` receives
// the snapshot state and returns the writes.
template <class Build>
void run_staged(EngineHarness& h, std::vector<StagedTxn>& txns, std::mt19937_64& rng, Build build) {
    EpochNumber last = 0;
    for (const auto& t : txns) last = std::max(last, t.post);
    for (EpochNumber e = h.applied(); e <= last; ++e) {
        std::vector<std::pair<std::uint32_t, TaggedTxn>> batch;
        std::vector<std::uint32_t> ticks;
        for (auto& t : txns) {
            if (t.post != e) continue;
            build(h, t);
            ticks.push_back(static_cast<std::uint32_t>(ticks.size()));
        }
        std::shuffle(ticks.begin(), ticks.end(), rng);
        std::size_t i = 0;
        for (auto& t : txns) {
            if (t.post != e) continue;
            t.txn.ts = ts(e, ticks[i++], t.node);
            batch.emplace_back(t.node, t.txn);
        }
        h.run_epoch(batch);
    }
}

struct HistoryResult {
    bool serializable = true;
    std::size_t txns = 0;
    std::size_t committed = 0;
    std::size_t ssi_aborts = 0;
};

// ≤6 SSI txns over ≤4 keys with random read and write sets.
inline HistoryResult ssi_history(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    int keys = std::uniform_int_distribution<int>(1, 4)(rng);
    int n = std::uniform_int_distribution<int>(2, 6)(rng);
    auto h = load_keys(keys);

    std::vector<StagedTxn> txns(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& t = txns[static_cast<std::size_t>(i)];
        t.node = static_cast<std::uint32_t>(rng() % 2);
        t.snapshot = 1 + rng() % 2;
        t.post = t.snapshot + rng() % 2;
        t.txn.payload.txn_id = {1, static_cast<std::uint64_t>(i)};
        t.txn.payload.isolation = IsolationLevel::SerializableSnapshotIsolation;
        std::set<int> rk, wk;
        for (int k = 0; k < keys; ++k) {
            if (rng() % 2) rk.insert(k);
            if (rng() % 3 == 0) wk.insert(k);
        }
        if (wk.empty()) wk.insert(static_cast<int>(rng() % static_cast<std::uint64_t>(keys)));
        for (int k : wk) {
            rk.insert(k);  // SI/SSI writers carry the pre-write version
            t.observed.writes[key_name(k)] = "t" + std::to_string(i) + "." + key_name(k);
        }
        for (int k : rk) t.observed.reads[key_name(k)] = std::nullopt;
    }

    run_staged(h, txns, rng, [](EngineHarness& hh, StagedTxn& t) {
        t.observed.id = t.txn.payload.txn_id;
        t.txn.payload.reads.clear();
        t.txn.payload.writes.clear();
        for (auto& [k, v] : t.observed.reads) {
            v = lookup(hh.state_after(t.snapshot), k);
            t.txn.payload.reads.push_back(hh.read(t.snapshot, k));
        }
        for (const auto& [k, v] : t.observed.writes) t.txn.payload.writes.push_back({k, v});
    });

    HistoryResult r;
    r.txns = txns.size();
    std::vector<ObservedTxn> committed;
    for (const auto& t : txns) {
        const auto& log = h.logs().at(t.post);
        if (committed_in(log, t.observed.id)) {
            committed.push_back(t.observed);
        } else if (aborted_in(log, t.observed.id) == AbortReason::SsiDangerousStructure) {
            ++r.ssi_aborts;
        }
    }
    r.committed = committed.size();
    r.serializable = serializable(h.state_after(1), committed, h.state_after(h.applied()));
    return r;
}

struct IncrementResult {
    bool conserved = true;      // final counter == initial + committed increments
    bool pair_violation = false;  // two committed increments read the same version
    std::size_t committed = 0;
    std::size_t txns = 0;
};

// 2..6 SI read-modify-write increments of one counter, with unrelated
// writes mixed in, across staggered snapshots and posting epochs.
inline IncrementResult increment_scenario(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::int64_t initial = static_cast<std::int64_t>(rng() % 100);
    auto h = load_keys(3, "");
    h.run_epoch({{0, make_txn(99, 1, ts(1, 0, 0), {}, {{"ctr", std::to_string(initial)}},
                              IsolationLevel::ReadCommitted)}});

    int n = std::uniform_int_distribution<int>(2, 6)(rng);
    std::vector<StagedTxn> txns(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& t = txns[static_cast<std::size_t>(i)];
        t.node = static_cast<std::uint32_t>(rng() % 2);
        t.snapshot = 2 + rng() % 2;
        t.post = t.snapshot + rng() % 2;
        t.txn.payload.txn_id = {2, static_cast<std::uint64_t>(i)};
        t.txn.payload.isolation = IsolationLevel::SnapshotIsolation;
    }
    std::vector<std::optional<Version>> read_version(txns.size());
    run_staged(h, txns, rng, [&](EngineHarness& hh, StagedTxn& t) {
        auto v = lookup(hh.state_after(t.snapshot), "ctr");
        auto r = hh.read(t.snapshot, "ctr");
        read_version[t.txn.payload.txn_id.seq] = r.observed;
        t.txn.payload.reads = {r};
        t.txn.payload.writes = {{"ctr", std::to_string(std::stoll(*v) + 1)}};
        if (rng() % 2) {
            auto other = key_name(static_cast<int>(rng() % 3));
            t.txn.payload.reads.push_back(hh.read(t.snapshot, other));
            t.txn.payload.writes.push_back({other, "x"});
            std::sort(t.txn.payload.reads.begin(), t.txn.payload.reads.end(),
                      [](const ReadEntry& a, const ReadEntry& b) { return a.key < b.key; });
            std::sort(t.txn.payload.writes.begin(), t.txn.payload.writes.end(),
                      [](const WriteEntry& a, const WriteEntry& b) { return a.key < b.key; });
        }
    });

    IncrementResult r;
    r.txns = txns.size();
    std::set<std::optional<Version>> committed_reads;
    for (const auto& t : txns) {
        if (!committed_in(h.logs().at(t.post), t.txn.payload.txn_id)) continue;
        ++r.committed;
        if (!committed_reads.insert(read_version[t.txn.payload.txn_id.seq]).second) r.pair_violation = true;
    }
    auto final_value = lookup(h.state_after(h.applied()), "ctr");
    r.conserved = final_value && std::stoll(*final_value) == initial + static_cast<std::int64_t>(r.committed);
    return r;
}

}  // namespace taas::testing
