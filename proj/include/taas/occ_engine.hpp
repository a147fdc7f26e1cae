#pragma once

// Conflict handling for one TaaS node: readset validation, read-consistency
// checks, the deterministic per-epoch writeset merge and SSI analysis.
//
// Everything here except VersionTable mutation is a pure function of its
// inputs, so every node that feeds in the same MergeInput and the same
// VersionTable produces a byte-identical EpochLog.

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "taas/txn_model.hpp"

namespace taas {

class EpochGap : public std::runtime_error {
  public:
    EpochGap(EpochNumber expected, EpochNumber got);
    EpochNumber expected;
    EpochNumber got;
};

class IncompleteInput : public std::runtime_error {
  public:
    explicit IncompleteInput(NodeId missing);
    NodeId missing;
};

struct KeyVersion {
    Version version;
    Timestamp ts;
    bool operator==(const KeyVersion&) const = default;
};

// Latest commit version per key, advanced only by applying EpochLogs in
// epoch order. Single writer; readers see whole epochs only.
class VersionTable {
  public:
    ObservedVersion latest(std::string_view key) const;
    const KeyVersion* find(std::string_view key) const;

    // Epoch the next applied log must carry.
    EpochNumber next_epoch() const { return next_epoch_; }
    bool empty_history() const { return next_epoch_ == 0; }

    // Throws EpochGap unless log.epoch == next_epoch().
    void apply(const EpochLog& log);

    std::size_t size() const { return latest_.size(); }
    Digest digest() const;

    Bytes encode_snapshot() const;
    static VersionTable decode_snapshot(ByteView bytes);

    bool operator==(const VersionTable& other) const = default;

  private:
    struct Hash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
    };
    std::unordered_map<std::string, KeyVersion, Hash, std::equal_to<>> latest_;
    EpochNumber next_epoch_ = 0;
};

VersionTable apply_epoch_to_version_table(VersionTable vt, const EpochLog& log);

// Returns AbortReason::None on pass.
//
// Strong: fails with StaleRead iff some read observed an older version than
// the table's latest. StaleOk: always passes.
AbortReason validate_read_consistency(const TaggedTxn& txn, const VersionTable& vt);

// RC: always passes. RR, SI, SSI: fails with ReadValidationFailed iff some
// observed version differs from the table's latest (absence included).
AbortReason validate_readset(const TaggedTxn& txn, const VersionTable& vt, IsolationLevel level);

// Consistency check then readset check at the payload's own isolation level.
AbortReason validate(const TaggedTxn& txn, const VersionTable& vt);

// Early check on the origin node before exchange. The table may lag the
// version the client observed, so only strictly older observations abort.
// Any txn this rejects is also rejected, with the same reason, by validate()
// against a table that has applied at least as many epochs.
AbortReason early_validate(const TaggedTxn& txn, const VersionTable& vt);

// A txn aborted on its origin node before exchange; travels in the batch so
// the epoch log records the decision.
struct AbortMarker {
    TxnId txn_id;
    Timestamp ts;
    AbortReason reason = AbortReason::None;
    bool operator==(const AbortMarker&) const = default;
};

struct NodeBatch {
    std::vector<TaggedTxn> txns;
    std::vector<AbortMarker> early_aborts;
    bool operator==(const NodeBatch&) const = default;
};

struct MergeInput {
    EpochNumber epoch = 0;
    std::map<NodeId, NodeBatch> per_node_batches;
};

// Throws IncompleteInput when some member has no batch.
void check_complete(const MergeInput& input, std::span<const NodeId> members);

// First-writer-win merge. Entries are processed in ascending Timestamp
// order; a txn commits iff none of its write keys was claimed by an earlier
// committed txn of this epoch, and otherwise aborts whole with
// WriteConflictLost. Repeated TxnIds keep only the earliest occurrence.
EpochLog merge_epoch(const MergeInput& input, std::span<const NodeId> members);

// Recently logged TxnIds, for dropping re-posted duplicates at merge time.
class RecentTxnIndex {
  public:
    explicit RecentTxnIndex(std::uint64_t window_epochs = 1024) : window_(window_epochs) {}
    void add(const EpochLog& log);
    bool contains(const TxnId& id) const { return ids_.contains(id); }
    std::uint64_t window() const { return window_; }

  private:
    std::uint64_t window_;
    std::set<TxnId> ids_;
    std::deque<std::pair<EpochNumber, std::vector<TxnId>>> by_epoch_;
};

// Full deterministic epoch resolution: drop duplicates already logged, apply
// early abort markers, re-validate every txn against `vt` (the table as of
// the previous epoch), first-writer-win merge, then abort SSI pivots.
EpochLog resolve_epoch(const MergeInput& input, std::span<const NodeId> members, const VersionTable& vt,
                       const RecentTxnIndex& recent);

// Read/write footprint of a txn for dependency analysis. Transactions in one
// graph are mutually concurrent: they all read the same snapshot.
struct TxnFootprint {
    TxnId id;
    Timestamp ts;
    std::vector<std::string> reads;
    std::vector<std::string> writes;
};

enum class EdgeKind : std::uint8_t { WriteWrite, ReadWrite };

class DependencyGraph {
  public:
    struct Edge {
        std::size_t from;
        std::size_t to;
        EdgeKind kind;
    };

    // rw edge T1 -> T2 iff T1 read a key T2 writes (T1 cannot have seen it).
    // ww edge T1 -> T2 iff both write a key and T1 has the smaller Timestamp.
    static DependencyGraph build(std::span<const TxnFootprint> txns);

    const std::vector<TxnFootprint>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    std::size_t rw_edge_count() const;

  private:
    std::vector<TxnFootprint> nodes_;
    std::vector<Edge> edges_;
};

// Repeatedly aborts the pivot (a candidate with both an incoming and an
// outgoing rw edge among surviving candidates) with the greatest Timestamp
// until no dangerous structure remains.
std::set<TxnId> analyze_ssi(const DependencyGraph& graph, std::span<const TxnId> candidate_commits);

}  // namespace taas
