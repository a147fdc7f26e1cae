#include <gtest/gtest.h>

#include "support.hpp"
#include "taas/txn_model.hpp"

using namespace taas;
using namespace taas::testing;

TEST(Timestamp, OrdersByEpochThenTickThenNode) {
    EXPECT_LT(ts(1, 9, 9), ts(2, 0, 0));
    EXPECT_LT(ts(1, 3, 9), ts(1, 5, 0));
    EXPECT_LT(ts(1, 3, 0), ts(1, 3, 1));
    EXPECT_EQ(compare_timestamps(ts(4, 2, 1), ts(4, 2, 1)), std::strong_ordering::equal);
}

TEST(Version, UnreadOrdersBeforeEveryVersion) {
    ObservedVersion unread = kUnread;
    ObservedVersion v0 = Version{0, 0};
    EXPECT_LT(unread, v0);
    EXPECT_LT(v0, ObservedVersion(Version{0, 1}));
    EXPECT_LT(ObservedVersion(Version{0, 7}), ObservedVersion(Version{1, 0}));
}

TEST(Names, RoundTripThroughParse) {
    for (auto l : {IsolationLevel::ReadCommitted, IsolationLevel::RepeatableRead, IsolationLevel::SnapshotIsolation,
                   IsolationLevel::SerializableSnapshotIsolation}) {
        EXPECT_EQ(parse_isolation(to_string(l)), l);
    }
    for (auto m : {ConsistencyMode::Strong, ConsistencyMode::StaleOk}) EXPECT_EQ(parse_consistency(to_string(m)), m);
    EXPECT_FALSE(parse_isolation("serializable-ish"));
}

TEST(Verdict, WellFormedness) {
    EXPECT_TRUE(TxnVerdict::committed({1, 2}, {3, 0}).well_formed());
    EXPECT_TRUE(TxnVerdict::aborted({1, 2}, AbortReason::StaleRead).well_formed());
    TxnVerdict bad{{1, 2}, Decision::Committed, AbortReason::WriteConflictLost, Version{1, 1}};
    EXPECT_FALSE(bad.well_formed());
    TxnVerdict no_version{{1, 2}, Decision::Committed, AbortReason::None, std::nullopt};
    EXPECT_FALSE(no_version.well_formed());
}

namespace {

EpochLog sample_log() {
    EpochLog log;
    log.epoch = 12;
    log.committed.push_back({{3, 1}, ts(12, 5, 1), {{"b", "2"}, {"c", std::nullopt}}});
    log.committed.push_back({{1, 9}, ts(12, 1, 0), {{"a", "1"}}});
    log.aborted.push_back({{9, 9}, AbortReason::WriteConflictLost});
    log.aborted.push_back({{2, 4}, AbortReason::StaleRead});
    return log;
}

}  // namespace

TEST(EpochLog, SealSortsAndDigests) {
    auto log = sample_log();
    seal(log);
    ASSERT_EQ(log.committed.size(), 2u);
    EXPECT_EQ(log.committed[0].txn_id, (TxnId{1, 9}));
    EXPECT_EQ(log.aborted[0].txn_id, (TxnId{2, 4}));
    EXPECT_EQ(log.digest, compute_digest(log));

    // Input order does not matter after sealing.
    auto other = sample_log();
    std::swap(other.committed[0], other.committed[1]);
    seal(other);
    EXPECT_EQ(other, log);
}

TEST(EpochLog, EncodeDecodeRoundTrip) {
    auto log = sample_log();
    seal(log);
    auto bytes = encode_epoch_log(log);
    EXPECT_EQ(decode_epoch_log(bytes), log);
}

TEST(EpochLog, DigestMismatchRejected) {
    auto log = sample_log();
    seal(log);
    auto bytes = encode_epoch_log(log);
    bytes[bytes.size() - 40] ^= 0x01;  // body byte, digest left alone
    EXPECT_THROW(decode_epoch_log(bytes), DecodeError);
}

TEST(EpochLog, TruncationRejected) {
    auto log = sample_log();
    seal(log);
    auto bytes = encode_epoch_log(log);
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() - 1}) {
        Bytes part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(decode_epoch_log(part), DecodeError) << cut;
    }
}

TEST(Codec, PayloadRoundTrip) {
    TxnPayload p;
    p.txn_id = {5, 77};
    p.isolation = IsolationLevel::RepeatableRead;
    p.consistency = ConsistencyMode::StaleOk;
    p.reads = {{"a", Version{2, 3}}, {"b", kUnread}};
    p.writes = {{"a", "x"}, {"z", std::nullopt}};
    p.sub_txn_labels = {"kv", "graph"};
    EXPECT_EQ(decode<TxnPayload>(encode(p)), p);

    TaggedTxn t{p, ts(4, 1, 2)};
    EXPECT_EQ(decode<TaggedTxn>(encode(t)), t);
    auto v = TxnVerdict::committed({5, 77}, {4, 0});
    EXPECT_EQ(decode<TxnVerdict>(encode(v)), v);
    VersionedRecord rec{"k", std::nullopt, {9, 9}};
    EXPECT_EQ(decode<VersionedRecord>(encode(rec)), rec);
}

TEST(Codec, TrailingBytesRejected) {
    auto b = encode(TxnId{1, 2});
    b.push_back(0);
    EXPECT_THROW(decode<TxnId>(b), DecodeError);
}

TEST(Codec, InvalidEnumRejected) {
    TxnPayload p;
    auto b = encode(p);
    b[12] = 42;  // isolation byte follows the 12-byte TxnId
    EXPECT_THROW(decode<TxnPayload>(b), DecodeError);
}
