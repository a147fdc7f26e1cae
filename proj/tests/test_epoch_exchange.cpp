#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "support.hpp"
#include "taas/epoch_exchange.hpp"

using namespace taas;
using namespace taas::testing;

TEST(ClusterConfig, ParseFormatRoundTrip) {
    auto cfg = ClusterConfig::parse(R"(# three nodes
epoch_ms 5
quorum 2
retry_budget 7
taas 0 127.0.0.1:7000
taas 1 127.0.0.1:7001
taas 2 127.0.0.1:7002
storage 0 127.0.0.1:8000 - user5
storage 1 127.0.0.1:8001 user5 -
)");
    EXPECT_EQ(cfg.nodes.size(), 3u);
    EXPECT_EQ(cfg.epoch_interval, 5000);
    EXPECT_EQ(cfg.effective_quorum(), 2u);
    EXPECT_EQ(cfg.retry_budget, 7u);
    ASSERT_EQ(cfg.storage.size(), 2u);
    EXPECT_EQ(cfg.storage[0].range_lo, "");
    EXPECT_EQ(cfg.storage[0].range_hi, "user5");
    auto again = ClusterConfig::parse(cfg.format());
    EXPECT_EQ(again.format(), cfg.format());
}

TEST(ClusterConfig, Defaults) {
    auto cfg = ClusterConfig::local(5, 1, 10'000);
    EXPECT_EQ(cfg.effective_quorum(), 3u);
    EXPECT_EQ(cfg.effective_peer_timeout(), 100'000);
    EXPECT_EQ(cfg.effective_retransmit_interval(), 30'000);
    EXPECT_NO_THROW(cfg.validate());
}

TEST(ClusterConfig, RejectsBadInput) {
    EXPECT_THROW(ClusterConfig::parse("taas 0 a:1\ntaas 0 b:2\n").validate(), std::invalid_argument);
    EXPECT_THROW(ClusterConfig::parse("quorum 3\ntaas 0 a:1\ntaas 1 b:2\n").validate(), std::invalid_argument);
    EXPECT_THROW(ClusterConfig::parse("bogus 1\n"), std::invalid_argument);
    EXPECT_THROW(ClusterConfig::parse("epoch_ms x\n"), std::invalid_argument);
}

TEST(ClusterConfig, EnvironmentOverridesEpoch) {
    auto path = ::testing::TempDir() + "cluster.conf";
    std::ofstream(path) << "epoch_ms 10\ntaas 0 127.0.0.1:1\n";
    ::setenv("TAAS_EPOCH_MS", "3", 1);
    auto cfg = ClusterConfig::load(path);
    ::unsetenv("TAAS_EPOCH_MS");
    EXPECT_EQ(cfg.epoch_interval, 3000);
}

TEST(KeyRanges, CoverKeySpaceInOrder) {
    auto r = split_key_ranges("user", 1000, 10, 3);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r.front().first, "");
    EXPECT_EQ(r.back().second, "");
    for (std::size_t i = 1; i < r.size(); ++i) EXPECT_EQ(r[i - 1].second, r[i].first);
}

TEST(EpochClock, OneBoundaryPerCall) {
    EpochClock c(10, 0, 0);
    EXPECT_FALSE(c.advance(9));
    EXPECT_EQ(c.next_tick(), 0u);
    EXPECT_EQ(c.next_tick(), 1u);
    // 35 us later three boundaries are due; each call yields one.
    EXPECT_EQ(c.advance(35), 1u);
    EXPECT_EQ(c.next_tick(), 0u);
    EXPECT_EQ(c.advance(35), 2u);
    EXPECT_EQ(c.advance(35), 3u);
    EXPECT_FALSE(c.advance(35));
    EXPECT_EQ(c.next_boundary(), 40);
}

TEST(EpochClock, ResumeCatchesUp) {
    EpochClock c(10, 0, 0);
    c.resume(5, 1000, 8);
    EXPECT_EQ(c.current(), 5u);
    EXPECT_EQ(c.advance(1000), 6u);
    EXPECT_EQ(c.advance(1000), 7u);
    EXPECT_EQ(c.advance(1000), 8u);
    EXPECT_FALSE(c.advance(1000));
}

namespace {

NodeBatch big_batch(int n) {
    NodeBatch b;
    for (int i = 0; i < n; ++i) {
        b.txns.push_back(make_txn(1, static_cast<std::uint64_t>(i), ts(3, static_cast<std::uint32_t>(i), 1),
                                  {{key_name(i), kUnread}}, {{key_name(i), std::string(100, 'x')}}));
    }
    b.early_aborts.push_back({{2, 2}, ts(3, 99, 1), AbortReason::StaleRead});
    return b;
}

}  // namespace

TEST(Batches, ChunkAndReassembleInAnyOrder) {
    auto batch = big_batch(60);
    auto chunks = chunk_batch(NodeId{1}, 3, batch, 1024);
    ASSERT_GT(chunks.size(), 3u);
    EXPECT_TRUE(chunks.back().terminal);
    for (std::size_t i = 0; i + 1 < chunks.size(); ++i) EXPECT_FALSE(chunks[i].terminal);

    std::mt19937_64 rng(3);
    std::shuffle(chunks.begin(), chunks.end(), rng);
    BatchAssembler a;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        auto r = a.offer(chunks[i]);
        EXPECT_EQ(r, i + 1 == chunks.size() ? BatchAssembler::Offer::Completed : BatchAssembler::Offer::Buffered);
    }
    EXPECT_EQ(a.offer(chunks[0]), BatchAssembler::Offer::AlreadyComplete);
    ASSERT_TRUE(a.complete(NodeId{1}, 3));
    EXPECT_EQ(*a.batch(NodeId{1}, 3), batch);
}

TEST(Batches, DuplicateChunkWhilePartial) {
    auto chunks = chunk_batch(NodeId{1}, 3, big_batch(30), 1024);
    ASSERT_GT(chunks.size(), 1u);
    BatchAssembler a;
    EXPECT_EQ(a.offer(chunks[0]), BatchAssembler::Offer::Buffered);
    EXPECT_EQ(a.offer(chunks[0]), BatchAssembler::Offer::Duplicate);
}

TEST(Batches, EmptyBatchIsOneTerminalChunk) {
    auto chunks = chunk_batch(NodeId{0}, 9, NodeBatch{});
    ASSERT_EQ(chunks.size(), 1u);
    EXPECT_TRUE(chunks[0].terminal);
    EXPECT_EQ(decode<BatchMessage>(encode(chunks[0])), chunks[0]);
}

TEST(Batches, CollectNeedsEveryMember) {
    std::vector<NodeId> members{NodeId{0}, NodeId{1}, NodeId{2}};
    BatchAssembler a;
    a.put_complete(NodeId{0}, 4, big_batch(2));
    a.put_complete(NodeId{2}, 4, NodeBatch{});
    EXPECT_FALSE(a.collect(4, members));
    EXPECT_EQ(a.missing(4, members), std::vector<NodeId>{NodeId{1}});
    a.put_complete(NodeId{1}, 4, NodeBatch{});
    auto in = a.collect(4, members);
    ASSERT_TRUE(in);
    EXPECT_EQ(in->epoch, 4u);
    EXPECT_EQ(in->per_node_batches.size(), 3u);
    a.drop_through(4);
    EXPECT_EQ(a.pending_epochs(), 0u);
}

TEST(Tracker, QuorumCountsSelf) {
    BroadcastTracker t(NodeId{0}, {NodeId{0}, NodeId{1}, NodeId{2}}, 2, 100, 3);
    t.start(7, 0);
    EXPECT_EQ(t.outcome(7).kind, QuorumOutcome::Kind::Pending);
    auto o = t.on_ack(NodeId{2}, 7);
    ASSERT_TRUE(o);
    EXPECT_EQ(o->kind, QuorumOutcome::Kind::Achieved);
    EXPECT_FALSE(t.on_ack(NodeId{2}, 7));
    EXPECT_FALSE(t.fully_acked(7));
    t.on_ack(NodeId{1}, 7);
    EXPECT_TRUE(t.fully_acked(7));
    EXPECT_FALSE(t.next_due());
}

TEST(Tracker, RetransmitsThenFails) {
    BroadcastTracker t(NodeId{0}, {NodeId{0}, NodeId{1}, NodeId{2}}, 2, 100, 2);
    t.start(1, 0);
    EXPECT_TRUE(t.due(50).empty());
    auto d = t.due(100);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].peers, (std::vector<NodeId>{NodeId{1}, NodeId{2}}));
    t.due(200);
    EXPECT_TRUE(t.take_failed().empty());
    t.due(300);
    EXPECT_EQ(t.take_failed(), std::vector<EpochNumber>{1});
    EXPECT_EQ(t.outcome(1).kind, QuorumOutcome::Kind::Failed);
}

TEST(Tracker, SingleNodeAchievesImmediately) {
    BroadcastTracker t(NodeId{0}, {NodeId{0}}, 1, 100, 2);
    t.start(0, 0);
    EXPECT_EQ(t.outcome(0).kind, QuorumOutcome::Kind::Achieved);
    EXPECT_TRUE(t.fully_acked(0));
}
