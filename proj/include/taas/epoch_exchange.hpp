#pragma once

// Epoch clocking and per-epoch batch dissemination: cluster configuration,
// the epoch clock, batch chunking/assembly and quorum-ack bookkeeping. The
// pieces are sans-IO; TaasNode wires them to a Runtime.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taas/occ_engine.hpp"
#include "taas/runtime.hpp"
#include "taas/txn_model.hpp"

namespace taas {

inline constexpr Micros kDefaultEpochInterval = 10'000;
inline constexpr std::size_t kDefaultChunkBytes = 64 * 1024;

struct Member {
    NodeId id;
    std::string address;
};

// Key range [lo, hi); empty hi means unbounded.
struct StorageMember {
    std::uint32_t shard = 0;
    std::string address;
    std::string range_lo;
    std::string range_hi;
};

struct ClusterConfig {
    std::vector<Member> nodes;
    std::vector<StorageMember> storage;
    Micros epoch_interval = kDefaultEpochInterval;
    std::uint32_t quorum = 0;  // 0 selects floor(n/2)+1
    Micros peer_timeout = 0;   // 0 selects 10 epochs
    Micros retransmit_interval = 0;  // 0 selects 3 epochs
    std::uint32_t retry_budget = 20;
    std::size_t chunk_bytes = kDefaultChunkBytes;

    std::uint32_t effective_quorum() const;
    Micros effective_peer_timeout() const;
    Micros effective_retransmit_interval() const;
    std::vector<NodeId> member_ids() const;

    // Throws std::invalid_argument on duplicate ids/addresses or a quorum
    // larger than the cluster.
    void validate() const;

    // Line format, '#' comments:
    //   epoch_ms <n> | quorum <n> | retry_budget <n> | peer_timeout_ms <n>
    //   retransmit_ms <n> | chunk_bytes <n>
    //   taas <id> <host:port>
    //   storage <shard> <host:port> <lo|-> <hi|->
    static ClusterConfig parse(std::string_view text);
    std::string format() const;
    // Reads a config file; TAAS_EPOCH_MS overrides epoch_ms when set.
    static ClusterConfig load(const std::string& path);

    // In-process cluster with loopback placeholder addresses.
    static ClusterConfig local(std::uint32_t taas_nodes, std::uint32_t storage_shards, Micros epoch_interval,
                               std::uint16_t base_port = 0);
};

// Splits a key space evenly into `shards` ranges, for keys of the form
// prefix + zero-padded index.
std::vector<std::pair<std::string, std::string>> split_key_ranges(std::string_view prefix, std::uint64_t keys,
                                                                  int width, std::uint32_t shards);

// Per-node epoch timer. Epochs advance one boundary per call so a stalled
// clock emits every intermediate epoch.
class EpochClock {
  public:
    explicit EpochClock(Micros interval = kDefaultEpochInterval, Micros start_time = 0, EpochNumber start_epoch = 0);

    // New epoch number if a boundary has passed since the last one; the tick
    // counter resets.
    std::optional<EpochNumber> advance(Micros now);

    EpochNumber current() const { return current_; }
    Micros next_boundary() const { return boundary_; }
    Micros interval() const { return interval_; }
    std::uint32_t next_tick() { return tick_++; }

    // Restarts at `epoch`; if `catch_up_to` is ahead, the boundaries up to it
    // are already due at `now`.
    void resume(EpochNumber epoch, Micros now, EpochNumber catch_up_to);

  private:
    Micros interval_;
    Micros boundary_;
    EpochNumber current_;
    std::uint32_t tick_ = 0;
};

struct BatchMessage {
    NodeId from;
    EpochNumber epoch = 0;
    std::uint32_t seq = 0;
    bool terminal = false;
    std::vector<TaggedTxn> txns;
    std::vector<AbortMarker> early_aborts;
    bool operator==(const BatchMessage&) const = default;
};

struct AckMessage {
    NodeId from;
    NodeId acking_node;
    EpochNumber acking_epoch = 0;
    bool operator==(const AckMessage&) const = default;
};

void put(ByteWriter& w, const AbortMarker& v);
void get(ByteReader& r, AbortMarker& v);
void put(ByteWriter& w, const NodeBatch& v);
void get(ByteReader& r, NodeBatch& v);
void put(ByteWriter& w, const BatchMessage& v);
void get(ByteReader& r, BatchMessage& v);

// Splits a batch into chunks of at most `max_bytes` of encoded txns (a
// single oversized txn gets its own chunk). The last chunk is terminal.
std::vector<BatchMessage> chunk_batch(NodeId from, EpochNumber epoch, const NodeBatch& batch,
                                      std::size_t max_bytes = kDefaultChunkBytes);

// Per-(node, epoch) reassembly with dedup by chunk sequence.
class BatchAssembler {
  public:
    enum class Offer { Buffered, Duplicate, Completed, AlreadyComplete, Rejected };

    Offer offer(const BatchMessage& msg);
    void put_complete(NodeId from, EpochNumber epoch, NodeBatch batch);

    bool complete(NodeId from, EpochNumber epoch) const;
    const NodeBatch* batch(NodeId from, EpochNumber epoch) const;
    std::vector<NodeId> missing(EpochNumber epoch, std::span<const NodeId> members) const;

    // A complete MergeInput once every member has a terminal batch for
    // `epoch`, otherwise nullopt.
    std::optional<MergeInput> collect(EpochNumber epoch, std::span<const NodeId> members) const;

    void drop_through(EpochNumber epoch);
    std::size_t pending_epochs() const;

  private:
    struct Partial {
        std::map<std::uint32_t, BatchMessage> chunks;
        std::optional<std::uint32_t> terminal_seq;
        std::optional<NodeBatch> assembled;
    };
    std::map<std::pair<EpochNumber, NodeId>, Partial> parts_;
};

struct QuorumOutcome {
    enum class Kind { Pending, Achieved, Failed };
    Kind kind = Kind::Pending;
    std::uint32_t acks = 0;
    bool operator==(const QuorumOutcome&) const = default;
};

// Ack bookkeeping and retransmission schedule for this node's own batches.
// The sender counts toward the quorum.
class BroadcastTracker {
  public:
    BroadcastTracker(NodeId self, std::vector<NodeId> members, std::uint32_t quorum, Micros retransmit_interval,
                     std::uint32_t retry_budget);

    void start(EpochNumber epoch, Micros now);
    // Outcome if this ack moved the epoch to Achieved.
    std::optional<QuorumOutcome> on_ack(NodeId from, EpochNumber epoch);

    struct Due {
        EpochNumber epoch;
        std::vector<NodeId> peers;
    };
    // Retransmissions due at `now`. Epochs that exhaust the retry budget
    // before reaching quorum become Failed and are reported by take_failed().
    std::vector<Due> due(Micros now);
    std::vector<EpochNumber> take_failed();

    QuorumOutcome outcome(EpochNumber epoch) const;
    bool tracking(EpochNumber epoch) const { return epochs_.contains(epoch); }
    bool fully_acked(EpochNumber epoch) const;
    void forget(EpochNumber epoch);
    std::optional<Micros> next_due() const;

  private:
    struct State {
        std::set<NodeId> acked;
        QuorumOutcome outcome;
        std::uint32_t attempts = 0;
        Micros next_retransmit = 0;
        Micros backoff = 0;
    };
    NodeId self_;
    std::vector<NodeId> members_;
    std::uint32_t quorum_;
    Micros retransmit_interval_;
    std::uint32_t retry_budget_;
    std::map<EpochNumber, State> epochs_;
    std::vector<EpochNumber> failed_;
};

}  // namespace taas
