#pragma once

// One TaaS node as a sans-IO actor: accepts posts, tags and pre-validates
// them, seals and disseminates a batch per epoch, merges complete epochs in
// order, persists the resulting logs, answers clients and pushes logs to
// storage. Restarted incarnations recover from local state and peers.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "taas/durable_store.hpp"
#include "taas/epoch_exchange.hpp"
#include "taas/occ_engine.hpp"
#include "taas/runtime.hpp"
#include "taas/wire.hpp"

namespace taas {

// persisted: a local verdict waits for the log to be persisted and for the
// node's own batch of that epoch to reach quorum. merged: right after merge.
enum class AckMode { Persisted, Merged };

struct TaasNodeOptions {
    ClusterConfig cluster;
    NodeId id;
    AckMode ack_mode = AckMode::Persisted;
    // Sync mode seals epoch e+1 only after e has been merged.
    bool pipelined = true;
    Micros validate_cost = 100;  // simulated CPU per post
    Micros merge_cost = 5;       // simulated CPU per merged txn
    EpochNumber snapshot_every = 64;
    std::uint64_t dedup_window = 1024;
    std::size_t push_window = 8;
    Micros push_retry = 0;         // 0 selects 5 epochs
    Micros recovery_timeout = 0;   // 0 selects 5 epochs
    // Test hook: extra wait before merging an epoch that is already complete.
    std::function<Micros(EpochNumber)> merge_delay;
};

struct EpochStat {
    EpochNumber epoch = 0;
    std::uint32_t committed = 0;
    std::uint32_t aborted = 0;
    Micros sealed_at = 0;
    Micros merged_at = 0;
};

struct TaasNodeCounters {
    std::uint64_t posts = 0;
    std::uint64_t early_aborts = 0;
    std::uint64_t duplicate_posts = 0;
    std::uint64_t verdicts_sent = 0;
    std::uint64_t quorum_failures = 0;
    std::uint64_t peer_timeouts = 0;
    std::uint64_t retransmits = 0;
    std::uint64_t snapshots_installed = 0;
    std::uint64_t recoveries = 0;
};

// TxnId -> decision for the recent window of logged epochs.
class VerdictIndex {
  public:
    explicit VerdictIndex(std::uint64_t window_epochs) : window_(window_epochs) {}
    void add(const EpochLog& log);
    const TxnVerdict* find(const TxnId& id) const;

  private:
    std::uint64_t window_;
    std::map<TxnId, TxnVerdict> verdicts_;
    std::deque<std::pair<EpochNumber, std::vector<TxnId>>> by_epoch_;
};

class TaasNode final : public Actor {
  public:
    enum class Phase { Recovering, Running, Shutdown };

    TaasNode(TaasNodeOptions opts, std::shared_ptr<DurableStore> store);

    void on_start(Runtime& rt) override;
    void on_message(Runtime& rt, EndpointId from, ByteView message) override;
    void on_timer(Runtime& rt) override;

    // Rejects further posts with NodeShutdown.
    void shut_down() { phase_ = Phase::Shutdown; }

    Phase phase() const { return phase_; }
    NodeId id() const { return opts_.id; }
    EpochNumber current_epoch() const { return clock_.current(); }
    EpochNumber applied_next() const { return vt_.next_epoch(); }
    EpochNumber seal_next() const { return seal_next_; }
    const VersionTable& version_table() const { return vt_; }
    const DurableStore& store() const { return *store_; }
    const TaasNodeCounters& counters() const { return counters_; }
    const std::vector<EpochStat>& epoch_stats() const { return epoch_stats_; }
    // Storage push cursor: lowest epoch not yet acknowledged by every shard.
    EpochNumber push_cursor() const;

  private:
    struct PushState {
        EpochNumber acked_next = 0;
        EpochNumber sent_next = 0;
        Micros last_progress = 0;
    };

    void pump(Runtime& rt);
    void arm(Runtime& rt);

    void handle_post(Runtime& rt, EndpointId from, PostTxn& post);
    void handle_batch(Runtime& rt, const BatchMessage& msg);
    void handle_ack(Runtime& rt, const AckMessage& msg);
    void handle_snapshot_req(Runtime& rt, EndpointId from, const SnapshotReq& req);
    void handle_snapshot_resp(Runtime& rt, SnapshotResp resp);
    void handle_push_ack(Runtime& rt, const PushAck& ack);

    void advance_clock(Runtime& rt);
    void seal(Runtime& rt, EpochNumber epoch);
    void broadcast(Runtime& rt, EpochNumber epoch, const std::vector<NodeId>& peers);
    const NodeBatch* own_batch(EpochNumber epoch) const;
    void try_merge(Runtime& rt);
    void merge(Runtime& rt, const MergeInput& input);
    void install_log(const EpochLog& log);
    void emit_verdicts(Runtime& rt, EpochNumber epoch);
    void fail_epoch(Runtime& rt, EpochNumber epoch);
    void maybe_release_own(EpochNumber epoch);
    void push(Runtime& rt);
    void check_peer_timeout(Runtime& rt);

    void load_local();
    void finish_recovery(Runtime& rt);
    void reply(Runtime& rt, EndpointId to, const TxnVerdict& v);

    bool multi() const { return members_.size() > 1; }

    TaasNodeOptions opts_;
    std::shared_ptr<DurableStore> store_;
    std::vector<NodeId> members_;
    std::vector<NodeId> peers_;
    Phase phase_ = Phase::Recovering;

    EpochClock clock_;
    EpochNumber seal_next_ = 0;
    VersionTable vt_;
    RecentTxnIndex recent_;
    VerdictIndex index_;
    BatchAssembler assembler_;
    BroadcastTracker tracker_;

    std::map<EpochNumber, NodeBatch> pending_;
    std::map<EpochNumber, std::vector<TxnId>> local_txns_;
    std::map<TxnId, std::vector<EndpointId>> handles_;
    std::map<TxnId, TxnVerdict> early_verdicts_;
    std::set<EpochNumber> merged_awaiting_quorum_;
    std::map<EpochNumber, Micros> merge_ready_at_;
    std::map<EpochNumber, Micros> sealed_at_;
    std::set<EpochNumber> timed_out_;

    std::map<std::uint32_t, PushState> push_;

    // Recovery handshake.
    Micros recovery_deadline_ = 0;
    std::map<NodeId, SnapshotResp> responses_;
    std::deque<std::pair<EndpointId, PostTxn>> queued_posts_;

    TaasNodeCounters counters_;
    std::vector<EpochStat> epoch_stats_;
};

}  // namespace taas
