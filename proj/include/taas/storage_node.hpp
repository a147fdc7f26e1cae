#pragma once

// Storage tier: a versioned key-value store updated only by replaying epoch
// logs, plus the actor that serves it to TaaS pushers and clients.

#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "taas/runtime.hpp"
#include "taas/txn_model.hpp"

namespace taas {

class UnknownMeta : public std::runtime_error {
  public:
    explicit UnknownMeta(const std::string& name) : std::runtime_error("unknown meta " + name) {}
};

// Backend seam. apply_epoch is idempotent per epoch and strictly ordered.
class StorageAdaptor {
  public:
    virtual ~StorageAdaptor() = default;

    // Returns the first unapplied epoch afterwards. A log below it is a
    // no-op; a log beyond it throws EpochGap.
    virtual EpochNumber apply_epoch(const EpochLog& log) = 0;
    virtual std::optional<VersionedRecord> get_data(std::string_view key) const = 0;
    // Throws UnknownMeta.
    virtual Bytes get_meta(const std::string& name) const = 0;
    virtual EpochNumber applied_next() const = 0;

    // Last applied epoch, none before the first apply.
    std::optional<EpochNumber> applied_upto() const {
        auto n = applied_next();
        if (n == 0) return std::nullopt;
        return n - 1;
    }
};

// Key range [lo, hi); empty hi is unbounded.
struct KeyRange {
    std::string lo;
    std::string hi;
    bool contains(std::string_view key) const { return key >= lo && (hi.empty() || key < hi); }
    bool operator==(const KeyRange&) const = default;
};

// Published under meta name "shards".
struct ShardMap {
    struct Entry {
        std::uint32_t shard = 0;
        EndpointId endpoint = 0;
        KeyRange range;
        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> entries;

    const Entry* lookup(std::string_view key) const;
    Bytes encode() const;
    static ShardMap decode(ByteView bytes);
    bool operator==(const ShardMap&) const = default;
};

// Key-space descriptor for a benchmark table, e.g. meta "ycsb.table".
struct TableDescriptor {
    std::string name;
    std::string key_prefix;
    std::uint64_t keys = 0;
    std::uint32_t key_width = 0;
    std::uint32_t value_bytes = 0;

    std::string key(std::uint64_t index) const;
    Bytes encode() const;
    static TableDescriptor decode(ByteView bytes);
    bool operator==(const TableDescriptor&) const = default;
};

struct KvStorageOptions {
    KeyRange range;
    std::size_t cache_entries = 4096;  // 0 disables the cache
    std::optional<std::filesystem::path> persist_path;
    bool fsync = false;
};

// Read-through LRU for hot records. Invalidated per key on apply.
class RecordCache {
  public:
    explicit RecordCache(std::size_t capacity) : capacity_(capacity) {}
    std::optional<VersionedRecord> get(std::string_view key);
    void put(const VersionedRecord& rec);
    void invalidate(std::string_view key);
    std::size_t size() const { return index_.size(); }
    std::uint64_t hits() const { return hits_; }
    std::uint64_t misses() const { return misses_; }

  private:
    std::size_t capacity_;
    std::list<VersionedRecord> lru_;
    std::unordered_map<std::string, std::list<VersionedRecord>::iterator> index_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
};

// Ordered in-memory map with optional append-only log file. One writer
// (apply_epoch), any number of concurrent readers.
class KvStorage final : public StorageAdaptor {
  public:
    explicit KvStorage(KvStorageOptions opts = {});
    ~KvStorage() override;
    KvStorage(const KvStorage&) = delete;
    KvStorage& operator=(const KvStorage&) = delete;

    EpochNumber apply_epoch(const EpochLog& log) override;
    std::optional<VersionedRecord> get_data(std::string_view key) const override;
    Bytes get_meta(const std::string& name) const override;
    EpochNumber applied_next() const override;

    void register_meta(const std::string& name, Bytes blob);

    // SHA-256 over sorted (key, value, version) of every record.
    Digest state_digest() const;
    std::size_t record_count() const;
    std::map<std::string, VersionedRecord> records() const;

    std::uint64_t cache_hits() const;
    std::uint64_t cache_misses() const;
    const KeyRange& range() const { return opts_.range; }

  private:
    void replay_file();

    KvStorageOptions opts_;
    mutable std::shared_mutex mu_;
    std::map<std::string, VersionedRecord, std::less<>> data_;
    std::map<std::string, Bytes> meta_;
    EpochNumber applied_next_ = 0;
    mutable std::mutex cache_mu_;
    mutable RecordCache cache_;
    int fd_ = -1;
};

struct StorageNodeOptions {
    std::uint32_t shard = 0;
    Micros get_cost = 10;     // simulated service time per GET_DATA
    Micros apply_cost = 2;    // per committed txn in a pushed log
};

class StorageNode final : public Actor {
  public:
    StorageNode(StorageNodeOptions opts, std::shared_ptr<KvStorage> store);

    void on_start(Runtime& rt) override;
    void on_message(Runtime& rt, EndpointId from, ByteView message) override;
    void on_timer(Runtime& rt) override;

    KvStorage& store() { return *store_; }
    std::uint64_t gaps() const { return gaps_; }
    std::uint64_t duplicate_pushes() const { return duplicates_; }

  private:
    StorageNodeOptions opts_;
    std::shared_ptr<KvStorage> store_;
    std::uint64_t gaps_ = 0;
    std::uint64_t duplicates_ = 0;
};

}  // namespace taas
