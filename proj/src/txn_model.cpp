#include "taas/txn_model.hpp"

#include <algorithm>
#include <array>

namespace taas {

std::strong_ordering compare_timestamps(const Timestamp& a, const Timestamp& b) { return a <=> b; }

namespace {

constexpr std::array<std::string_view, 4> kIsolationNames{"rc", "rr", "si", "ssi"};
constexpr std::array<std::string_view, 2> kConsistencyNames{"strong", "stale-ok"};
constexpr std::array<std::string_view, kAbortReasonCount> kReasonNames{
    "none", "stale_read", "read_validation_failed", "write_conflict_lost", "ssi_dangerous_structure",
    "node_shutdown"};

template <class E>
E checked_enum(std::uint8_t raw, std::uint8_t max, const char* what) {
    if (raw > max) throw DecodeError(std::string("invalid ") + what);
    return static_cast<E>(raw);
}

bool committed_before(const CommittedTxn& a, const CommittedTxn& b) { return a.ts < b.ts; }
bool aborted_before(const AbortedTxn& a, const AbortedTxn& b) { return a.txn_id < b.txn_id; }

void put_body(ByteWriter& w, const EpochLog& log) {
    w.u64(log.epoch);
    w.u32(static_cast<std::uint32_t>(log.committed.size()));
    for (const auto& c : log.committed) {
        put(w, c.txn_id);
        put(w, c.ts);
        w.u32(static_cast<std::uint32_t>(c.writes.size()));
        for (const auto& we : c.writes) put(w, we);
    }
    w.u32(static_cast<std::uint32_t>(log.aborted.size()));
    for (const auto& a : log.aborted) {
        put(w, a.txn_id);
        w.u8(static_cast<std::uint8_t>(a.reason));
    }
}

const EpochLog& canonical_view(const EpochLog& log, EpochLog& scratch) {
    if (std::is_sorted(log.committed.begin(), log.committed.end(), committed_before) &&
        std::is_sorted(log.aborted.begin(), log.aborted.end(), aborted_before)) {
        return log;
    }
    scratch = log;
    std::stable_sort(scratch.committed.begin(), scratch.committed.end(), committed_before);
    std::stable_sort(scratch.aborted.begin(), scratch.aborted.end(), aborted_before);
    return scratch;
}

}  // namespace

std::string_view to_string(IsolationLevel level) { return kIsolationNames.at(static_cast<std::size_t>(level)); }
std::string_view to_string(ConsistencyMode mode) { return kConsistencyNames.at(static_cast<std::size_t>(mode)); }
std::string_view to_string(AbortReason reason) { return kReasonNames.at(static_cast<std::size_t>(reason)); }

std::optional<IsolationLevel> parse_isolation(std::string_view s) {
    for (std::size_t i = 0; i < kIsolationNames.size(); ++i) {
        if (kIsolationNames[i] == s) return static_cast<IsolationLevel>(i);
    }
    return std::nullopt;
}

std::optional<ConsistencyMode> parse_consistency(std::string_view s) {
    for (std::size_t i = 0; i < kConsistencyNames.size(); ++i) {
        if (kConsistencyNames[i] == s) return static_cast<ConsistencyMode>(i);
    }
    return std::nullopt;
}

bool TxnVerdict::well_formed() const {
    bool committed = decision == Decision::Committed;
    return committed == (reason == AbortReason::None) && committed == commit_version.has_value();
}

Digest compute_digest(const EpochLog& log) {
    EpochLog scratch;
    ByteWriter w;
    put_body(w, canonical_view(log, scratch));
    return Sha256::of(w.bytes());
}

void seal(EpochLog& log) {
    std::stable_sort(log.committed.begin(), log.committed.end(), committed_before);
    std::stable_sort(log.aborted.begin(), log.aborted.end(), aborted_before);
    log.digest = compute_digest(log);
}

Bytes encode_epoch_log(const EpochLog& log) { return encode(log); }

EpochLog decode_epoch_log(ByteView bytes) { return decode<EpochLog>(bytes); }

void put(ByteWriter& w, const TxnId& v) {
    w.u32(v.origin);
    w.u64(v.seq);
}

void put(ByteWriter& w, const Timestamp& v) {
    w.u64(v.epoch);
    w.u32(v.tick);
    w.u32(v.node.value);
}

void put(ByteWriter& w, const Version& v) {
    w.u64(v.epoch);
    w.u32(v.index);
}

void put(ByteWriter& w, const ObservedVersion& v) {
    w.boolean(v.has_value());
    if (v) put(w, *v);
}

void put(ByteWriter& w, const ReadEntry& v) {
    w.str(v.key);
    put(w, v.observed);
}

void put(ByteWriter& w, const WriteEntry& v) {
    w.str(v.key);
    w.boolean(v.value.has_value());
    if (v.value) w.str(*v.value);
}

void put(ByteWriter& w, const TxnPayload& v) {
    put(w, v.txn_id);
    w.u8(static_cast<std::uint8_t>(v.isolation));
    w.u8(static_cast<std::uint8_t>(v.consistency));
    w.u32(static_cast<std::uint32_t>(v.reads.size()));
    for (const auto& e : v.reads) put(w, e);
    w.u32(static_cast<std::uint32_t>(v.writes.size()));
    for (const auto& e : v.writes) put(w, e);
    w.u32(static_cast<std::uint32_t>(v.sub_txn_labels.size()));
    for (const auto& l : v.sub_txn_labels) w.str(l);
}

void put(ByteWriter& w, const TaggedTxn& v) {
    put(w, v.payload);
    put(w, v.ts);
}

void put(ByteWriter& w, const TxnVerdict& v) {
    put(w, v.txn_id);
    w.u8(static_cast<std::uint8_t>(v.decision));
    w.u8(static_cast<std::uint8_t>(v.reason));
    w.boolean(v.commit_version.has_value());
    if (v.commit_version) put(w, *v.commit_version);
}

void put(ByteWriter& w, const EpochLog& v) {
    EpochLog scratch;
    const EpochLog& canon = canonical_view(v, scratch);
    put_body(w, canon);
    w.raw(ByteView(v.digest.data(), v.digest.size()));
}

void get(ByteReader& r, TxnId& v) {
    v.origin = r.u32();
    v.seq = r.u64();
}

void get(ByteReader& r, Timestamp& v) {
    v.epoch = r.u64();
    v.tick = r.u32();
    v.node.value = r.u32();
}

void get(ByteReader& r, Version& v) {
    v.epoch = r.u64();
    v.index = r.u32();
}

void get(ByteReader& r, ObservedVersion& v) {
    if (r.boolean()) {
        Version ver;
        get(r, ver);
        v = ver;
    } else {
        v.reset();
    }
}

void get(ByteReader& r, ReadEntry& v) {
    v.key = r.str();
    get(r, v.observed);
}

void get(ByteReader& r, WriteEntry& v) {
    v.key = r.str();
    if (r.boolean()) {
        v.value = r.str();
    } else {
        v.value.reset();
    }
}

void get(ByteReader& r, TxnPayload& v) {
    get(r, v.txn_id);
    v.isolation = checked_enum<IsolationLevel>(r.u8(), 3, "isolation level");
    v.consistency = checked_enum<ConsistencyMode>(r.u8(), 1, "consistency mode");
    v.reads.resize(r.count(5));
    for (auto& e : v.reads) get(r, e);
    v.writes.resize(r.count(5));
    for (auto& e : v.writes) get(r, e);
    v.sub_txn_labels.resize(r.count(4));
    for (auto& l : v.sub_txn_labels) l = r.str();
}

void get(ByteReader& r, TaggedTxn& v) {
    get(r, v.payload);
    get(r, v.ts);
}

void get(ByteReader& r, TxnVerdict& v) {
    get(r, v.txn_id);
    v.decision = checked_enum<Decision>(r.u8(), 1, "decision");
    v.reason = checked_enum<AbortReason>(r.u8(), kAbortReasonCount - 1, "abort reason");
    if (r.boolean()) {
        Version ver;
        get(r, ver);
        v.commit_version = ver;
    } else {
        v.commit_version.reset();
    }
}

void get(ByteReader& r, EpochLog& v) {
    v.epoch = r.u64();
    v.committed.resize(r.count(28));
    for (auto& c : v.committed) {
        get(r, c.txn_id);
        get(r, c.ts);
        c.writes.resize(r.count(5));
        for (auto& we : c.writes) get(r, we);
    }
    v.aborted.resize(r.count(13));
    for (auto& a : v.aborted) {
        get(r, a.txn_id);
        a.reason = checked_enum<AbortReason>(r.u8(), kAbortReasonCount - 1, "abort reason");
    }
    for (auto& b : v.digest) b = r.u8();
    if (!std::is_sorted(v.committed.begin(), v.committed.end(), committed_before) ||
        !std::is_sorted(v.aborted.begin(), v.aborted.end(), aborted_before)) {
        throw DecodeError("epoch log lists not in canonical order");
    }
    if (compute_digest(v) != v.digest) throw DecodeError("epoch log digest mismatch");
}

void put(ByteWriter& w, const VersionedRecord& v) {
    w.str(v.key);
    w.boolean(v.value.has_value());
    if (v.value) w.str(*v.value);
    put(w, v.version);
}

void get(ByteReader& r, VersionedRecord& v) {
    v.key = r.str();
    if (r.boolean()) {
        v.value = r.str();
    } else {
        v.value.reset();
    }
    get(r, v.version);
}

std::string to_string(const TxnId& id) { return std::to_string(id.origin) + ":" + std::to_string(id.seq); }

std::string to_string(const Timestamp& ts) {
    return "(" + std::to_string(ts.epoch) + "," + std::to_string(ts.tick) + "," + std::to_string(ts.node.value) + ")";
}

std::string to_string(const Version& v) {
    return "(" + std::to_string(v.epoch) + "," + std::to_string(v.index) + ")";
}

}  // namespace taas
