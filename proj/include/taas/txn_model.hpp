#pragma once

// Core transaction domain types shared by every layer, plus their canonical
// binary encoding. All types are plain values.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taas/bytes.hpp"
#include "taas/digest.hpp"

namespace taas {

using EpochNumber = std::uint64_t;

struct NodeId {
    std::uint32_t value = 0;
    auto operator<=>(const NodeId&) const = default;
};

// origin identifies the client session's home; seq is per-origin monotone.
struct TxnId {
    std::uint32_t origin = 0;
    std::uint64_t seq = 0;
    auto operator<=>(const TxnId&) const = default;
};

// Ordered lexicographically by (epoch, tick, node).
struct Timestamp {
    EpochNumber epoch = 0;
    std::uint32_t tick = 0;
    NodeId node;
    auto operator<=>(const Timestamp&) const = default;
};

std::strong_ordering compare_timestamps(const Timestamp& a, const Timestamp& b);

// Commit version of a key: epoch of the committing log and the committing
// transaction's index in that log's committed list.
struct Version {
    EpochNumber epoch = 0;
    std::uint32_t index = 0;
    auto operator<=>(const Version&) const = default;
};

// A read of a key that has never been materialized records no version.
// std::nullopt orders before every real Version, which is what staleness
// checks need.
using ObservedVersion = std::optional<Version>;
inline constexpr std::nullopt_t kUnread = std::nullopt;

enum class IsolationLevel : std::uint8_t {
    ReadCommitted = 0,
    RepeatableRead = 1,
    SnapshotIsolation = 2,
    SerializableSnapshotIsolation = 3,
};

enum class ConsistencyMode : std::uint8_t { Strong = 0, StaleOk = 1 };

enum class Decision : std::uint8_t { Committed = 0, Aborted = 1 };

enum class AbortReason : std::uint8_t {
    None = 0,
    StaleRead = 1,
    ReadValidationFailed = 2,
    WriteConflictLost = 3,
    SsiDangerousStructure = 4,
    NodeShutdown = 5,
};
inline constexpr int kAbortReasonCount = 6;

std::string_view to_string(IsolationLevel level);
std::string_view to_string(ConsistencyMode mode);
std::string_view to_string(AbortReason reason);
std::optional<IsolationLevel> parse_isolation(std::string_view s);
std::optional<ConsistencyMode> parse_consistency(std::string_view s);

struct ReadEntry {
    std::string key;
    ObservedVersion observed;
    bool operator==(const ReadEntry&) const = default;
};

// An absent value is a delete (tombstone).
struct WriteEntry {
    std::string key;
    std::optional<std::string> value;
    bool operator==(const WriteEntry&) const = default;
};

struct TxnPayload {
    TxnId txn_id;
    IsolationLevel isolation = IsolationLevel::SnapshotIsolation;
    ConsistencyMode consistency = ConsistencyMode::Strong;
    std::vector<ReadEntry> reads;
    std::vector<WriteEntry> writes;
    std::vector<std::string> sub_txn_labels;
    bool operator==(const TxnPayload&) const = default;
};

struct TaggedTxn {
    TxnPayload payload;
    Timestamp ts;
    bool operator==(const TaggedTxn&) const = default;
};

struct TxnVerdict {
    TxnId txn_id;
    Decision decision = Decision::Aborted;
    AbortReason reason = AbortReason::None;
    std::optional<Version> commit_version;

    static TxnVerdict committed(TxnId id, Version v) {
        return {id, Decision::Committed, AbortReason::None, v};
    }
    static TxnVerdict aborted(TxnId id, AbortReason r) { return {id, Decision::Aborted, r, std::nullopt}; }

    // Committed iff reason is None and a commit version is present.
    bool well_formed() const;
    bool operator==(const TxnVerdict&) const = default;
};

struct CommittedTxn {
    TxnId txn_id;
    Timestamp ts;
    std::vector<WriteEntry> writes;
    bool operator==(const CommittedTxn&) const = default;
};

struct AbortedTxn {
    TxnId txn_id;
    AbortReason reason = AbortReason::None;
    bool operator==(const AbortedTxn&) const = default;
};

// Storage-tier cell. An absent value with a version is a visible tombstone.
struct VersionedRecord {
    std::string key;
    std::optional<std::string> value;
    Version version;
    bool operator==(const VersionedRecord&) const = default;
};

struct EpochLog {
    EpochNumber epoch = 0;
    std::vector<CommittedTxn> committed;  // ascending Timestamp
    std::vector<AbortedTxn> aborted;      // ascending TxnId
    Digest digest{};
    bool operator==(const EpochLog&) const = default;
};

// Sorts the lists into canonical order and recomputes the digest.
void seal(EpochLog& log);
// Digest of the canonical encoding of (epoch, committed, aborted).
Digest compute_digest(const EpochLog& log);

// Canonical encoding: body followed by the 32-byte digest.
Bytes encode_epoch_log(const EpochLog& log);
// Throws DecodeError on malformed input or digest mismatch.
EpochLog decode_epoch_log(ByteView bytes);

// Field-level codec shared by the wire protocol and the on-disk format.
void put(ByteWriter& w, const TxnId& v);
void put(ByteWriter& w, const Timestamp& v);
void put(ByteWriter& w, const Version& v);
void put(ByteWriter& w, const ObservedVersion& v);
void put(ByteWriter& w, const ReadEntry& v);
void put(ByteWriter& w, const WriteEntry& v);
void put(ByteWriter& w, const TxnPayload& v);
void put(ByteWriter& w, const TaggedTxn& v);
void put(ByteWriter& w, const TxnVerdict& v);
void put(ByteWriter& w, const EpochLog& v);
void put(ByteWriter& w, const VersionedRecord& v);

void get(ByteReader& r, TxnId& v);
void get(ByteReader& r, Timestamp& v);
void get(ByteReader& r, Version& v);
void get(ByteReader& r, ObservedVersion& v);
void get(ByteReader& r, ReadEntry& v);
void get(ByteReader& r, WriteEntry& v);
void get(ByteReader& r, TxnPayload& v);
void get(ByteReader& r, TaggedTxn& v);
void get(ByteReader& r, TxnVerdict& v);
void get(ByteReader& r, EpochLog& v);
void get(ByteReader& r, VersionedRecord& v);

template <class T>
Bytes encode(const T& v) {
    ByteWriter w;
    put(w, v);
    return w.take();
}

template <class T>
T decode(ByteView bytes) {
    ByteReader r(bytes);
    T v{};
    get(r, v);
    r.expect_done();
    return v;
}

std::string to_string(const TxnId& id);
std::string to_string(const Timestamp& ts);
std::string to_string(const Version& v);

}  // namespace taas
