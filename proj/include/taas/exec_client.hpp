#pragma once

// Execution-layer SDK. TxnSession is a pure buffer of reads and writes;
// ClientCore does the I/O (storage reads, posting, verdict tracking) on
// behalf of whatever actor embeds it.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "taas/runtime.hpp"
#include "taas/storage_node.hpp"
#include "taas/txn_model.hpp"
#include "taas/wire.hpp"

namespace taas {

class SessionClosed : public std::logic_error {
  public:
    SessionClosed() : std::logic_error("transaction session is no longer active") {}
};

class TxnSession {
  public:
    enum class State { Active, Posted, Decided };

    TxnSession(TxnId id, IsolationLevel isolation, ConsistencyMode consistency);

    const TxnId& id() const { return id_; }
    IsolationLevel isolation() const { return isolation_; }
    ConsistencyMode consistency() const { return consistency_; }
    State state() const { return state_; }
    const std::optional<TxnVerdict>& verdict() const { return verdict_; }

    // Write-buffer hit (read-your-writes), or an earlier read of the key.
    // The outer optional is empty when storage must be consulted.
    std::optional<std::optional<std::string>> local_read(const std::string& key) const;
    // Records a storage read; NotFound records no version. Returns the value.
    std::optional<std::string> record_read(const std::string& key, const std::optional<VersionedRecord>& rec);
    // Records only the key's version (for blind writes under SI/SSI).
    void record_version(const std::string& key, const std::optional<VersionedRecord>& rec);

    void write(const std::string& key, std::string value);
    void erase(const std::string& key);

    // Written keys whose pre-write version must be fetched before posting.
    std::vector<std::string> keys_needing_version() const;

    // Reads sorted by key, writes sorted by key.
    TxnPayload payload() const;

    void mark_posted();
    void decide(const TxnVerdict& v);

    std::size_t read_count() const { return reads_.size(); }
    std::size_t write_count() const { return writes_.size(); }

  private:
    void require_active() const;

    struct Read {
        std::optional<std::string> value;
        ObservedVersion observed;
        bool value_known = true;  // false for version-only entries
    };

    TxnId id_;
    IsolationLevel isolation_;
    ConsistencyMode consistency_;
    State state_ = State::Active;
    std::map<std::string, Read> reads_;
    std::map<std::string, std::optional<std::string>> writes_;
    std::optional<TxnVerdict> verdict_;
};

// Sub-transactions sharing one TxnId, posted together as one payload.
class CompositeTxn {
  public:
    CompositeTxn(TxnId id, IsolationLevel isolation, ConsistencyMode consistency);

    // Creates (or returns) the sub-session for `label`.
    TxnSession& sub(const std::string& label);
    const TxnId& id() const { return id_; }
    std::vector<std::string> labels() const;

    // Union of sub-buffers. A key read by several subs keeps the first
    // observation; a key written by several subs keeps the later label's
    // write.
    TxnPayload payload() const;

  private:
    TxnId id_;
    IsolationLevel isolation_;
    ConsistencyMode consistency_;
    std::vector<std::pair<std::string, std::unique_ptr<TxnSession>>> subs_;
};

// Chooses the TaaS node a payload is posted to.
class Router {
  public:
    virtual ~Router() = default;
    // `avoid` is the node of the previous attempt, if any.
    virtual EndpointId pick(const TxnPayload& payload, std::span<const EndpointId> nodes,
                            std::optional<EndpointId> avoid, std::mt19937_64& rng) = 0;
};

class RandomRouter final : public Router {
  public:
    EndpointId pick(const TxnPayload& payload, std::span<const EndpointId> nodes, std::optional<EndpointId> avoid,
                    std::mt19937_64& rng) override;
};

struct ClientOptions {
    std::uint32_t client_id = 0;
    std::vector<EndpointId> taas_nodes;
    EndpointId meta_endpoint = storage_endpoint(0);
    IsolationLevel default_isolation = IsolationLevel::SnapshotIsolation;
    ConsistencyMode default_consistency = ConsistencyMode::Strong;
    Micros read_timeout = 50'000;
    Micros commit_timeout = 500'000;
    std::uint32_t max_read_attempts = 40;
    std::uint64_t seed = 1;
};

struct ReadResult {
    bool ok = true;  // false: storage unavailable
    std::optional<std::string> value;
};

struct ClientCounters {
    std::uint64_t storage_reads = 0;
    std::uint64_t buffered_reads = 0;
    std::uint64_t read_retries = 0;
    std::uint64_t posts = 0;
    std::uint64_t reposts = 0;
    std::uint64_t queries = 0;
    std::uint64_t duplicate_verdicts = 0;
};

// Callbacks receive the Runtime of the handler that completed them; the
// Runtime passed to an earlier call may no longer be valid.
class ClientCore {
  public:
    using ReadCallback = std::function<void(Runtime&, const ReadResult&)>;
    using VerdictCallback = std::function<void(Runtime&, const TxnVerdict&)>;
    using MetaCallback = std::function<void(Runtime&, std::optional<Bytes>)>;

    explicit ClientCore(ClientOptions opts, std::unique_ptr<Router> router = std::make_unique<RandomRouter>());

    // Fetches the shard map; reads issued before it arrives are queued.
    void start(Runtime& rt);
    bool ready() const { return shards_.has_value(); }
    const std::optional<ShardMap>& shard_map() const { return shards_; }

    std::shared_ptr<TxnSession> begin(std::optional<IsolationLevel> isolation = std::nullopt,
                                      std::optional<ConsistencyMode> consistency = std::nullopt);
    std::unique_ptr<CompositeTxn> begin_composite(std::optional<IsolationLevel> isolation = std::nullopt,
                                                  std::optional<ConsistencyMode> consistency = std::nullopt);
    TxnId next_txn_id();

    // Completes synchronously for buffered keys.
    void read(Runtime& rt, const std::shared_ptr<TxnSession>& s, const std::string& key, ReadCallback cb);
    void read(Runtime& rt, TxnSession& s, const std::string& key, ReadCallback cb);

    void commit(Runtime& rt, const std::shared_ptr<TxnSession>& s, VerdictCallback cb);
    void commit_composite(Runtime& rt, std::unique_ptr<CompositeTxn> c, VerdictCallback cb);
    // Posts a prepared payload as is.
    void post(Runtime& rt, TxnPayload payload, VerdictCallback cb);

    void get_meta(Runtime& rt, const std::string& name, MetaCallback cb);

    // Returns true if the message belonged to the client.
    bool on_message(Runtime& rt, EndpointId from, ByteView message);
    void on_timer(Runtime& rt);
    std::optional<Micros> next_deadline() const;

    std::size_t outstanding_commits() const { return commits_.size(); }
    const ClientCounters& counters() const { return counters_; }

  private:
    // ok is false once the read gave up.
    using FetchDone = std::function<void(Runtime&, bool ok, const std::optional<VersionedRecord>&)>;
    struct PendingRead {
        std::string key;
        EndpointId shard;
        Micros deadline;
        std::uint32_t attempts = 0;
        FetchDone done;
    };
    struct PendingCommit {
        TxnPayload payload;
        VerdictCallback cb;
        EndpointId node;
        Micros deadline;
        std::uint32_t attempts = 0;
    };
    struct PendingMeta {
        std::string name;
        MetaCallback cb;
    };

    void fetch(Runtime& rt, const std::string& key, FetchDone done);
    void send_read(Runtime& rt, std::uint64_t rid, PendingRead& r);
    void send_post(Runtime& rt, PendingCommit& c, std::optional<EndpointId> avoid);
    void handle_verdict(Runtime& rt, EndpointId from, const VerdictMsg& v);

    ClientOptions opts_;
    std::unique_ptr<Router> router_;
    std::mt19937_64 rng_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_rid_ = 1;
    std::optional<ShardMap> shards_;
    std::vector<std::function<void(Runtime&)>> waiting_for_map_;
    std::map<std::uint64_t, PendingRead> reads_;
    std::map<TxnId, PendingCommit> commits_;
    std::map<std::uint64_t, PendingMeta> metas_;
    std::uint64_t map_rid_ = 0;
    Micros map_deadline_ = 0;
    ClientCounters counters_;
};

}  // namespace taas
