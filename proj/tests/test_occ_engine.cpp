#include <gtest/gtest.h>

#include <thread>

#include "scenarios.hpp"
#include "support.hpp"
#include "taas/occ_engine.hpp"

using namespace taas;
using namespace taas::testing;

namespace {

const std::vector<NodeId> kTwo{NodeId{0}, NodeId{1}};

MergeInput two_node_input(EpochNumber e, std::vector<TaggedTxn> n0, std::vector<TaggedTxn> n1) {
    MergeInput in;
    in.epoch = e;
    in.per_node_batches[NodeId{0}].txns = std::move(n0);
    in.per_node_batches[NodeId{1}].txns = std::move(n1);
    return in;
}

// A table where `key` was last written in epoch `e` at index 0.
VersionTable table_with(const std::string& key, EpochNumber epochs_before, EpochNumber write_epoch) {
    VersionTable vt;
    for (EpochNumber e = 0; e < epochs_before; ++e) {
        EpochLog log;
        log.epoch = e;
        if (e == write_epoch) log.committed.push_back({{50, e}, ts(e, 0, 0), {{key, "w"}}});
        seal(log);
        vt.apply(log);
    }
    return vt;
}

}  // namespace

TEST(Merge, EarlierTimestampWinsTwoWriterConflict) {
    auto t1 = make_txn(1, 1, ts(4, 5, 0), {}, {{"A", "0"}});
    auto t2 = make_txn(2, 1, ts(4, 3, 1), {}, {{"A", "50"}});
    auto log = merge_epoch(two_node_input(4, {t1}, {t2}), kTwo);
    ASSERT_EQ(log.committed.size(), 1u);
    EXPECT_EQ(log.committed[0].txn_id, t2.payload.txn_id);
    EXPECT_EQ(log.committed[0].writes[0].value, "50");
    EXPECT_EQ(aborted_in(log, t1.payload.txn_id), AbortReason::WriteConflictLost);
}

TEST(Merge, EmptyEpoch) {
    auto log = merge_epoch(two_node_input(3, {}, {}), kTwo);
    EXPECT_EQ(log.epoch, 3u);
    EXPECT_TRUE(log.committed.empty());
    EXPECT_TRUE(log.aborted.empty());
    EXPECT_EQ(log.digest, compute_digest(log));
}

TEST(Merge, MissingBatchThrows) {
    MergeInput in;
    in.epoch = 0;
    in.per_node_batches[NodeId{0}];
    try {
        merge_epoch(in, kTwo);
        FAIL();
    } catch (const IncompleteInput& e) {
        EXPECT_EQ(e.missing, NodeId{1});
    }
}

TEST(Merge, AbortedTxnLosesAllItsWrites) {
    // t1 claims a; t2 wants a and b and aborts whole; t3 then takes b.
    auto t1 = make_txn(1, 1, ts(0, 1, 0), {}, {{"a", "1"}});
    auto t2 = make_txn(2, 1, ts(0, 2, 1), {}, {{"a", "2"}, {"b", "2"}});
    auto t3 = make_txn(3, 1, ts(0, 3, 0), {}, {{"b", "3"}});
    auto log = merge_epoch(two_node_input(0, {t1, t3}, {t2}), kTwo);
    EXPECT_TRUE(committed_in(log, t1.payload.txn_id));
    EXPECT_TRUE(committed_in(log, t3.payload.txn_id));
    EXPECT_EQ(aborted_in(log, t2.payload.txn_id), AbortReason::WriteConflictLost);
}

TEST(Merge, DuplicateTxnIdKeepsEarliest) {
    auto a = make_txn(1, 1, ts(0, 4, 0), {}, {{"x", "first"}});
    auto b = make_txn(1, 1, ts(0, 9, 1), {}, {{"y", "second"}});
    auto log = merge_epoch(two_node_input(0, {a}, {b}), kTwo);
    ASSERT_EQ(log.committed.size(), 1u);
    EXPECT_EQ(log.committed[0].writes[0].key, "x");
    EXPECT_TRUE(log.aborted.empty());
}

TEST(Merge, MatchesBruteForceOracle) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i) {
        auto in = random_merge_input(rng, 5, 3, 8, 3);
        auto log = merge_epoch(in, members_of(in));
        auto want = fww_oracle(in);
        std::vector<TxnId> got;
        for (const auto& c : log.committed) got.push_back(c.txn_id);
        ASSERT_EQ(got, want.committed) << "case " << i;
        ASSERT_EQ(log.aborted.size(), want.aborted.size());
        for (const auto& a : log.aborted) EXPECT_EQ(want.aborted.at(a.txn_id), a.reason);
    }
}

TEST(Merge, AtomicityAndDisjointOutcome) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 300; ++i) {
        auto in = random_merge_input(rng, 1, 4, 30, 8);
        auto log = merge_epoch(in, members_of(in));
        std::set<TxnId> ids;
        std::map<TxnId, const TaggedTxn*> source;
        for (const auto& [_, b] : in.per_node_batches) {
            for (const auto& t : b.txns) {
                auto [it, fresh] = source.try_emplace(t.payload.txn_id, &t);
                if (!fresh && t.ts < it->second->ts) it->second = &t;
            }
        }
        for (const auto& c : log.committed) {
            EXPECT_TRUE(ids.insert(c.txn_id).second);
            // Full writeset of the earliest occurrence.
            auto it = source.find(c.txn_id);
            ASSERT_NE(it, source.end());
            EXPECT_EQ(c.writes.size(), it->second->payload.writes.size());
        }
        for (const auto& a : log.aborted) EXPECT_TRUE(ids.insert(a.txn_id).second);
    }
}

TEST(Merge, DeterministicAcrossOrderAndThreads) {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 200; ++i) {
        auto in = random_merge_input(rng, 2, 4, 50, 16);
        auto members = members_of(in);
        auto base = merge_epoch(in, members);

        auto shuffled = in;
        for (auto& [_, b] : shuffled.per_node_batches) std::shuffle(b.txns.begin(), b.txns.end(), rng);
        auto reversed = members;
        std::reverse(reversed.begin(), reversed.end());
        Digest other{};
        std::thread th([&] { other = merge_epoch(shuffled, reversed).digest; });
        th.join();
        ASSERT_EQ(other, base.digest);
        ASSERT_EQ(encode_epoch_log(merge_epoch(shuffled, members)), encode_epoch_log(base));
    }
}

TEST(Validation, ReadConsistency) {
    auto vt = table_with("K", 8, 7);
    auto latest = vt.latest("K");
    ASSERT_TRUE(latest);
    auto fresh = make_txn(1, 1, ts(8, 0, 0), {{"K", latest}}, {});
    auto stale = make_txn(1, 2, ts(8, 0, 0), {{"K", Version{5, 0}}}, {});
    EXPECT_EQ(validate_read_consistency(fresh, vt), AbortReason::None);
    EXPECT_EQ(validate_read_consistency(stale, vt), AbortReason::StaleRead);
    stale.payload.consistency = ConsistencyMode::StaleOk;
    EXPECT_EQ(validate_read_consistency(stale, vt), AbortReason::None);
}

TEST(Validation, ReadsetPerLevel) {
    auto vt = table_with("K", 5, 4);
    auto changed = make_txn(1, 1, ts(5, 0, 0), {{"K", Version{3, 0}}}, {});
    auto absent_then_created = make_txn(1, 2, ts(5, 0, 0), {{"K", kUnread}}, {});
    auto empty = make_txn(1, 3, ts(5, 0, 0), {}, {{"K", "v"}});
    EXPECT_EQ(validate_readset(changed, vt, IsolationLevel::ReadCommitted), AbortReason::None);
    for (auto l : {IsolationLevel::RepeatableRead, IsolationLevel::SnapshotIsolation,
                   IsolationLevel::SerializableSnapshotIsolation}) {
        EXPECT_EQ(validate_readset(changed, vt, l), AbortReason::ReadValidationFailed);
        EXPECT_EQ(validate_readset(absent_then_created, vt, l), AbortReason::ReadValidationFailed);
        EXPECT_EQ(validate_readset(empty, vt, l), AbortReason::None);
    }
}

TEST(Validation, StrongReportsStaleBeforeReadset) {
    auto vt = table_with("K", 5, 4);
    auto t = make_txn(1, 1, ts(5, 0, 0), {{"K", Version{3, 0}}}, {}, IsolationLevel::RepeatableRead);
    EXPECT_EQ(validate(t, vt), AbortReason::StaleRead);
    t.payload.consistency = ConsistencyMode::StaleOk;
    EXPECT_EQ(validate(t, vt), AbortReason::ReadValidationFailed);
    t.payload.isolation = IsolationLevel::ReadCommitted;
    EXPECT_EQ(validate(t, vt), AbortReason::None);
}

TEST(Validation, EarlyCheckAgreesWithMergeTimeCheck) {
    // Whatever the origin rejects early, the merge-time check rejects too,
    // for the same reason, on any table at least as new.
    std::mt19937_64 rng(14);
    EngineHarness h;
    for (int e = 0; e < 6; ++e) {
        std::vector<std::pair<std::uint32_t, TaggedTxn>> batch;
        for (int i = 0; i < 4; ++i) {
            batch.push_back({0, make_txn(3, static_cast<std::uint64_t>(e * 10 + i), ts(static_cast<EpochNumber>(e),
                                                                                       static_cast<std::uint32_t>(i), 0),
                                         {}, {{key_name(static_cast<int>(rng() % 4)), "v"}},
                                         IsolationLevel::ReadCommitted)});
        }
        h.run_epoch(batch);
    }
    for (int i = 0; i < 500; ++i) {
        EpochNumber read_at = rng() % 7;
        EpochNumber early_at = read_at + rng() % (7 - read_at);
        EpochNumber merge_at = early_at + rng() % (7 - early_at);
        auto t = make_txn(4, static_cast<std::uint64_t>(i), ts(6, 0, 0),
                          {h.read(read_at, key_name(static_cast<int>(rng() % 4)))}, {},
                          static_cast<IsolationLevel>(rng() % 4), static_cast<ConsistencyMode>(rng() % 2));
        auto early = early_validate(t, h.vt_after(early_at));
        if (early != AbortReason::None) {
            EXPECT_EQ(validate(t, h.vt_after(merge_at)), early);
        }
    }
}

TEST(VersionTable, AdvancesAndRejectsGaps) {
    VersionTable vt;
    EpochLog empty;
    empty.epoch = 0;
    seal(empty);
    vt.apply(empty);
    EXPECT_EQ(vt.next_epoch(), 1u);
    EXPECT_EQ(vt.size(), 0u);

    EpochLog gap;
    gap.epoch = 3;
    seal(gap);
    EXPECT_THROW(vt.apply(gap), EpochGap);

    EpochLog one;
    one.epoch = 1;
    one.committed.push_back({{1, 1}, ts(1, 0, 0), {{"K", "v"}}});
    one.committed.push_back({{1, 2}, ts(1, 1, 0), {{"J", "v"}}});
    seal(one);
    vt.apply(one);
    EXPECT_EQ(vt.latest("K"), (Version{1, 0}));
    EXPECT_EQ(vt.latest("J"), (Version{1, 1}));
    EXPECT_EQ(vt.latest("nope"), kUnread);
}

TEST(VersionTable, ReplayIsDeterministicAndMonotone) {
    std::mt19937_64 rng(15);
    EngineHarness h;
    for (int e = 0; e < 20; ++e) {
        auto in = random_merge_input(rng, static_cast<EpochNumber>(e), 2, 10, 6);
        std::vector<std::pair<std::uint32_t, TaggedTxn>> batch;
        for (const auto& [node, b] : in.per_node_batches) {
            for (auto t : b.txns) {
                t.payload.isolation = IsolationLevel::ReadCommitted;
                t.payload.txn_id.origin = static_cast<std::uint32_t>(e);
                batch.push_back({node.value, t});
            }
        }
        h.run_epoch(batch);
    }
    VersionTable a, b;
    for (const auto& log : h.logs()) {
        auto before = a;
        a = apply_epoch_to_version_table(a, log);
        b.apply(log);
        for (int k = 0; k < 6; ++k) EXPECT_GE(a.latest(key_name(k)), before.latest(key_name(k)));
    }
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.digest(), b.digest());
    EXPECT_EQ(VersionTable::decode_snapshot(a.encode_snapshot()), a);
}

TEST(Resolve, CrossEpochLostUpdateCaught) {
    EngineHarness h;
    h.run_epoch({{0, make_txn(9, 0, ts(0, 0, 0), {}, {{"c", "0"}}, IsolationLevel::ReadCommitted)}});
    // Both read c after epoch 0; one posts in epoch 1, the other in epoch 2.
    auto r = h.read(1, "c");
    auto a = make_txn(1, 1, ts(1, 0, 0), {r}, {{"c", "1"}});
    auto log1 = h.run_epoch({{0, a}});
    EXPECT_TRUE(committed_in(log1, a.payload.txn_id));
    auto b = make_txn(2, 1, ts(2, 0, 1), {r}, {{"c", "1"}});
    auto log2 = h.run_epoch({{1, b}});
    EXPECT_EQ(aborted_in(log2, b.payload.txn_id), AbortReason::StaleRead);
}

TEST(Resolve, DropsTxnsAlreadyLogged) {
    EngineHarness h;
    auto a = make_txn(1, 1, ts(0, 0, 0), {}, {{"x", "1"}}, IsolationLevel::ReadCommitted);
    h.run_epoch({{0, a}});
    auto again = a;
    again.ts = ts(1, 0, 1);
    auto log = h.run_epoch({{1, again}});
    EXPECT_TRUE(log.committed.empty());
    EXPECT_TRUE(log.aborted.empty());
}

TEST(Resolve, EarlyAbortMarkerLandsInLog) {
    MergeInput in;
    in.epoch = 0;
    in.per_node_batches[NodeId{0}].early_aborts.push_back({{1, 1}, ts(0, 0, 0), AbortReason::StaleRead});
    in.per_node_batches[NodeId{1}];
    auto log = resolve_epoch(in, kTwo, VersionTable{}, RecentTxnIndex{});
    EXPECT_EQ(aborted_in(log, TxnId{1, 1}), AbortReason::StaleRead);
}

TEST(Ssi, NoRwEdgesNoAborts) {
    std::vector<TxnFootprint> fps{{{1, 1}, ts(0, 1, 0), {}, {"a"}}, {{1, 2}, ts(0, 2, 0), {}, {"b"}}};
    auto g = DependencyGraph::build(fps);
    EXPECT_EQ(g.rw_edge_count(), 0u);
    std::vector<TxnId> ids{{1, 1}, {1, 2}};
    EXPECT_TRUE(analyze_ssi(g, ids).empty());
}

TEST(Ssi, WriteSkewAbortsTheLaterTxn) {
    EngineHarness h;
    h.run_epoch({{0, make_txn(9, 0, ts(0, 0, 0), {}, {{"x", "1"}, {"y", "1"}}, IsolationLevel::ReadCommitted)}});
    auto t1 = make_txn(1, 1, ts(1, 2, 0), {h.read(1, "x"), h.read(1, "y")}, {{"y", "0"}},
                       IsolationLevel::SerializableSnapshotIsolation);
    auto t2 = make_txn(2, 1, ts(1, 4, 1), {h.read(1, "x"), h.read(1, "y")}, {{"x", "0"}},
                       IsolationLevel::SerializableSnapshotIsolation);
    auto log = h.run_epoch({{0, t1}, {1, t2}});
    EXPECT_TRUE(committed_in(log, t1.payload.txn_id));
    EXPECT_EQ(aborted_in(log, t2.payload.txn_id), AbortReason::SsiDangerousStructure);

    // Same shape at SI: both commit (write skew is allowed there).
    EngineHarness si;
    si.run_epoch({{0, make_txn(9, 0, ts(0, 0, 0), {}, {{"x", "1"}, {"y", "1"}}, IsolationLevel::ReadCommitted)}});
    t1.payload.isolation = t2.payload.isolation = IsolationLevel::SnapshotIsolation;
    auto log_si = si.run_epoch({{0, t1}, {1, t2}});
    EXPECT_EQ(log_si.committed.size(), 2u);
}

TEST(Ssi, ChainAbortsPivotOnly) {
    // t1 -rw-> t2 -rw-> t3: t2 is the pivot.
    std::vector<TxnFootprint> fps{{{1, 1}, ts(0, 1, 0), {"a"}, {"z1"}},
                                  {{1, 2}, ts(0, 2, 0), {"b"}, {"a"}},
                                  {{1, 3}, ts(0, 3, 0), {}, {"b"}}};
    auto g = DependencyGraph::build(fps);
    EXPECT_EQ(g.rw_edge_count(), 2u);
    std::vector<TxnId> ids{{1, 1}, {1, 2}, {1, 3}};
    EXPECT_EQ(analyze_ssi(g, ids), (std::set<TxnId>{{1, 2}}));
}

TEST(Ssi, RandomHistoriesSerializable) {
    for (std::uint64_t s = 0; s < 300; ++s) {
        auto r = ssi_history(1000 + s);
        ASSERT_TRUE(r.serializable) << "seed " << 1000 + s;
    }
}

TEST(Si, RandomIncrementsLoseNothing) {
    for (std::uint64_t s = 0; s < 300; ++s) {
        auto r = increment_scenario(5000 + s);
        ASSERT_TRUE(r.conserved) << "seed " << 5000 + s;
        ASSERT_FALSE(r.pair_violation) << "seed " << 5000 + s;
        ASSERT_GE(r.committed, 1u);
    }
}

TEST(SerializableOracle, DetectsWriteSkew) {
    KvState init{{"x", "1"}, {"y", "1"}};
    ObservedTxn a{{1, 1}, {{"x", "1"}, {"y", "1"}}, {{"y", "0"}}};
    ObservedTxn b{{1, 2}, {{"x", "1"}, {"y", "1"}}, {{"x", "0"}}};
    KvState fin{{"x", "0"}, {"y", "0"}};
    EXPECT_FALSE(serializable(init, {a, b}, fin));
    EXPECT_TRUE(serializable(init, {a}, KvState{{"x", "1"}, {"y", "0"}}));
}
