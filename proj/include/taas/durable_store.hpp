#pragma once

// Node-local durable state: the epoch log sequence, periodic VersionTable
// snapshots and the batches a node must not lose between sealing/receiving
// and merging. Memory-only by default (simulation keeps the object alive
// across actor crashes); with a directory it also writes files.
//
// On-disk layout under the directory:
//   logs-<first epoch>.seg  segments of kSegmentEpochs logs, each record
//                           u32 length + canonical EpochLog (digest footer)
//   snapshot.bin            u64 next_epoch + blob + SHA-256 of both
//   batches.wal             append-only batch/counter records, compacted
// Torn tail records are discarded on open.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "taas/occ_engine.hpp"
#include "taas/txn_model.hpp"

namespace taas {

class DurableStore {
  public:
    static constexpr EpochNumber kSegmentEpochs = 256;

    DurableStore();
    ~DurableStore();
    DurableStore(const DurableStore&) = delete;
    DurableStore& operator=(const DurableStore&) = delete;

    // Opens (creating if needed) a directory-backed store. `fsync` flushes
    // every append to stable storage.
    static std::unique_ptr<DurableStore> open(const std::filesystem::path& dir, bool fsync);

    // Logs must arrive gap-free; a log at or below the tail is ignored.
    void append_log(const EpochLog& log);
    // First epoch without a log.
    EpochNumber log_end() const { return log_end_; }
    EpochNumber log_begin() const { return log_begin_; }
    const EpochLog* log(EpochNumber e) const;
    std::vector<EpochLog> logs_from(EpochNumber from) const;
    // Replaces the whole log sequence with a suffix starting at `begin`
    // (after installing a peer snapshot).
    void reset_logs(EpochNumber begin);

    void put_snapshot(EpochNumber next_epoch, Bytes snapshot);
    const std::optional<std::pair<EpochNumber, Bytes>>& snapshot() const { return snapshot_; }

    void put_own_batch(EpochNumber epoch, const NodeBatch& batch);
    void drop_own_batch(EpochNumber epoch);
    const std::map<EpochNumber, NodeBatch>& own_batches() const { return own_; }

    void put_peer_batch(NodeId from, EpochNumber epoch, const NodeBatch& batch);
    void drop_peer_batches_through(EpochNumber epoch);
    const std::map<std::pair<EpochNumber, NodeId>, NodeBatch>& peer_batches() const { return peers_; }

    void put_counter(const std::string& name, std::uint64_t value);
    std::optional<std::uint64_t> counter(const std::string& name) const;

    bool empty() const;
    // Forgets everything, including files (disk wipe).
    void wipe();

    std::uint64_t fsyncs() const { return fsyncs_; }

  private:
    struct Files;
    void wal_append(const Bytes& record);
    void maybe_compact();

    std::map<EpochNumber, EpochLog> logs_;
    EpochNumber log_begin_ = 0;
    EpochNumber log_end_ = 0;
    std::optional<std::pair<EpochNumber, Bytes>> snapshot_;
    std::map<EpochNumber, NodeBatch> own_;
    std::map<std::pair<EpochNumber, NodeId>, NodeBatch> peers_;
    std::map<std::string, std::uint64_t> counters_;
    std::unique_ptr<Files> files_;
    std::uint64_t fsyncs_ = 0;
};

}  // namespace taas
