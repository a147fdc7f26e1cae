#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "taas/durable_store.hpp"

using namespace taas;
using namespace taas::testing;
namespace fs = std::filesystem;

namespace {

EpochLog log_at(EpochNumber e) {
    EpochLog log;
    log.epoch = e;
    log.committed.push_back({{1, e}, ts(e, 0, 0), {{key_name(static_cast<int>(e % 5)), std::to_string(e)}}});
    if (e % 3 == 0) log.aborted.push_back({{2, e}, AbortReason::WriteConflictLost});
    seal(log);
    return log;
}

NodeBatch batch_of(EpochNumber e) {
    NodeBatch b;
    b.txns.push_back(make_txn(4, e, ts(e, 1, 0), {{"k", kUnread}}, {{"k", "v"}}));
    return b;
}

fs::path fresh_dir(const std::string& name) {
    auto p = fs::path(::testing::TempDir()) / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(DurableStore, MemoryLogSequence) {
    DurableStore s;
    EXPECT_TRUE(s.empty());
    for (EpochNumber e = 0; e < 4; ++e) s.append_log(log_at(e));
    s.append_log(log_at(2));  // below tail: ignored
    EXPECT_THROW(s.append_log(log_at(7)), EpochGap);
    EXPECT_EQ(s.log_begin(), 0u);
    EXPECT_EQ(s.log_end(), 4u);
    EXPECT_EQ(*s.log(1), log_at(1));
    EXPECT_EQ(s.logs_from(2).size(), 2u);
    s.reset_logs(10);
    EXPECT_EQ(s.log_begin(), 10u);
    EXPECT_EQ(s.log_end(), 10u);
    s.append_log(log_at(10));
    EXPECT_EQ(s.log_end(), 11u);
}

TEST(DurableStore, BatchesAndCounters) {
    DurableStore s;
    s.put_own_batch(3, batch_of(3));
    s.put_own_batch(4, batch_of(4));
    s.drop_own_batch(3);
    EXPECT_EQ(s.own_batches().size(), 1u);
    s.put_peer_batch(NodeId{1}, 3, batch_of(3));
    s.put_peer_batch(NodeId{2}, 5, batch_of(5));
    s.drop_peer_batches_through(4);
    ASSERT_EQ(s.peer_batches().size(), 1u);
    EXPECT_EQ(s.peer_batches().begin()->first, (std::pair<EpochNumber, NodeId>{5, NodeId{2}}));
    s.put_counter("sealed", 9);
    EXPECT_EQ(s.counter("sealed"), 9u);
    EXPECT_FALSE(s.counter("other"));
    s.wipe();
    EXPECT_TRUE(s.empty());
}

TEST(DurableStore, FilesSurviveReopen) {
    auto dir = fresh_dir("durable_reopen");
    {
        auto s = DurableStore::open(dir, false);
        for (EpochNumber e = 0; e < 300; ++e) s->append_log(log_at(e));  // spans two segments
        s->put_snapshot(200, to_bytes("vt-blob"));
        s->put_own_batch(300, batch_of(300));
        s->put_peer_batch(NodeId{2}, 300, batch_of(300));
        s->put_counter("sealed", 301);
    }
    auto s = DurableStore::open(dir, false);
    EXPECT_EQ(s->log_begin(), 0u);
    EXPECT_EQ(s->log_end(), 300u);
    EXPECT_EQ(*s->log(257), log_at(257));
    ASSERT_TRUE(s->snapshot());
    EXPECT_EQ(s->snapshot()->first, 200u);
    EXPECT_EQ(s->snapshot()->second, to_bytes("vt-blob"));
    EXPECT_EQ(s->own_batches().at(300), batch_of(300));
    EXPECT_EQ(s->peer_batches().size(), 1u);
    EXPECT_EQ(s->counter("sealed"), 301u);
    s->append_log(log_at(300));
    auto again = DurableStore::open(dir, false);
    EXPECT_EQ(again->log_end(), 301u);
}

TEST(DurableStore, TornTailsDiscarded) {
    auto dir = fresh_dir("durable_torn");
    {
        auto s = DurableStore::open(dir, false);
        for (EpochNumber e = 0; e < 5; ++e) s->append_log(log_at(e));
        s->put_own_batch(5, batch_of(5));
    }
    fs::path seg;
    for (const auto& ent : fs::directory_iterator(dir)) {
        if (ent.path().extension() == ".seg") seg = ent.path();
    }
    ASSERT_FALSE(seg.empty());
    // Chop the last log record in half, and leave half a WAL record.
    auto size = fs::file_size(seg);
    fs::resize_file(seg, size - 20);
    {
        std::ofstream wal(dir / "batches.wal", std::ios::binary | std::ios::app);
        wal.write("\x00\x00\x00\x40\x01", 5);
    }
    auto s = DurableStore::open(dir, false);
    EXPECT_EQ(s->log_end(), 4u);
    EXPECT_EQ(*s->log(3), log_at(3));
    EXPECT_EQ(s->own_batches().size(), 1u);
    // The store keeps working past the repaired tail.
    s->append_log(log_at(4));
    auto again = DurableStore::open(dir, false);
    EXPECT_EQ(again->log_end(), 5u);
    EXPECT_EQ(*again->log(4), log_at(4));
}

TEST(DurableStore, CorruptRecordStopsReplay) {
    auto dir = fresh_dir("durable_corrupt");
    {
        auto s = DurableStore::open(dir, false);
        for (EpochNumber e = 0; e < 6; ++e) s->append_log(log_at(e));
    }
    fs::path seg;
    for (const auto& ent : fs::directory_iterator(dir)) {
        if (ent.path().extension() == ".seg") seg = ent.path();
    }
    {
        std::fstream f(seg, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(static_cast<std::streamoff>(fs::file_size(seg) / 2));
        f.put('\x7f');
    }
    auto s = DurableStore::open(dir, false);
    EXPECT_LT(s->log_end(), 6u);
    for (EpochNumber e = 0; e < s->log_end(); ++e) EXPECT_EQ(*s->log(e), log_at(e));
}

TEST(DurableStore, CorruptSnapshotIgnored) {
    auto dir = fresh_dir("durable_snap");
    {
        auto s = DurableStore::open(dir, false);
        s->put_snapshot(7, to_bytes("x"));
    }
    {
        std::fstream f(dir / "snapshot.bin", std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(2);
        f.put('\x55');
    }
    auto s = DurableStore::open(dir, false);
    EXPECT_FALSE(s->snapshot());
}

TEST(DurableStore, WipeErasesFiles) {
    auto dir = fresh_dir("durable_wipe");
    {
        auto s = DurableStore::open(dir, true);
        s->append_log(log_at(0));
        EXPECT_GT(s->fsyncs(), 0u);
        s->wipe();
    }
    auto s = DurableStore::open(dir, false);
    EXPECT_TRUE(s->empty());
}
