#pragma once

// Cluster launcher and benchmark driver: workload clients, the load phase,
// simulated and live runs, fault scenarios, scaling sweeps and the
// RunReport with its digest checks.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taas/exec_client.hpp"
#include "taas/sim.hpp"
#include "taas/taas_node.hpp"
#include "taas/workload.hpp"

namespace taas {

// Scenario file, one event per line, '#' comments:
//   <ms> kill|restart|wipe|isolate|rejoin <endpoint>
//   <ms> partition|heal <endpoint> <endpoint>
//   <ms> drop <endpoint> <endpoint> <rate>
// Endpoints are named taas<N>, storage<N> or client<N>. Times are relative
// to the start of the measured phase. wipe is a kill that also erases the
// node's durable state; a later restart recovers from peers.
struct FaultEvent {
    enum class Kind { Kill, Restart, Wipe, Isolate, Rejoin, Partition, Heal, Drop };
    Micros at = 0;
    Kind kind = Kind::Kill;
    EndpointId a = 0;
    EndpointId b = 0;
    double rate = 0;
};

struct FaultScenario {
    std::vector<FaultEvent> events;
    // Throws std::invalid_argument with the offending line number.
    static FaultScenario parse(std::string_view text);
    static FaultScenario load(const std::string& path);
};

std::optional<EndpointId> parse_endpoint_name(std::string_view name);
std::string endpoint_name(EndpointId id);

struct Percentiles {
    double p50 = 0;
    double p95 = 0;
    double p99 = 0;
    double mean = 0;
    std::uint64_t count = 0;
    static Percentiles of(std::vector<Micros> samples);
};

// Per-client accounting; owned outside the actor so it survives it.
struct ClientStats {
    std::uint64_t started = 0;
    std::uint64_t posted = 0;
    std::uint64_t committed = 0;
    std::uint64_t abandoned = 0;  // storage unreachable before posting
    std::array<std::uint64_t, kAbortReasonCount> aborts{};
    std::uint64_t ops = 0;
    std::uint64_t committed_ops = 0;
    std::int64_t committed_net_delta = 0;
    std::vector<Micros> txn_latency;
    std::vector<Micros> read_latency;
    Micros first_begin = -1;
    Micros last_verdict = 0;
    bool done = false;
    ClientCounters counters;
};

struct WorkloadClientOptions {
    ClientOptions client;
    WorkloadSpec spec;
    std::uint32_t index = 0;
    std::uint64_t quota = 0;
    Micros think_time = 0;
    // Simulated execution cost per operation, uniform in [0, 2 * op_time].
    Micros op_time = 0;
};

// Closed loop: one transaction in flight, `quota` transactions in total.
// Aborted transactions are counted, not retried.
class WorkloadClient final : public Actor {
  public:
    WorkloadClient(WorkloadClientOptions opts, std::shared_ptr<ClientStats> stats);

    void on_start(Runtime& rt) override;
    void on_message(Runtime& rt, EndpointId from, ByteView message) override;
    void on_timer(Runtime& rt) override;

  private:
    void next_txn(Runtime& rt);
    void step(Runtime& rt);
    void finish(Runtime& rt);
    void arm(Runtime& rt);

    WorkloadClientOptions opts_;
    std::shared_ptr<ClientStats> stats_;
    ClientCore core_;
    WorkloadGenerator gen_;
    std::mt19937_64 jitter_;
    std::uint64_t issued_ = 0;

    TxnPlan plan_;
    std::size_t op_ = 0;
    Micros begin_at_ = 0;
    std::shared_ptr<TxnSession> session_;
    std::unique_ptr<CompositeTxn> composite_;
    bool in_txn_ = false;
    std::optional<Micros> resume_at_;
};

// Writes every initial record through the cluster in blind RC batches.
class LoaderClient final : public Actor {
  public:
    LoaderClient(ClientOptions opts, WorkloadSpec spec, std::shared_ptr<bool> done, std::size_t batch = 256,
                 std::size_t parallel = 4);

    void on_start(Runtime& rt) override;
    void on_message(Runtime& rt, EndpointId from, ByteView message) override;
    void on_timer(Runtime& rt) override;

  private:
    void issue(Runtime& rt, std::uint64_t first);
    void arm(Runtime& rt);

    ClientCore core_;
    WorkloadSpec spec_;
    std::shared_ptr<bool> done_;
    std::size_t batch_;
    std::size_t parallel_;
    std::uint64_t next_ = 0;
    std::size_t inflight_ = 0;
};

struct BenchOptions {
    std::uint32_t taas_nodes = 3;
    std::uint32_t storage_nodes = 2;
    WorkloadSpec spec;
    FaultScenario faults;
    std::uint64_t seed = 1;
    Micros epoch_interval = kDefaultEpochInterval;
    AckMode ack_mode = AckMode::Persisted;
    bool pipelined = true;
    std::function<Micros(EpochNumber)> merge_delay;
    LinkModel link;
    bool preload = true;
    Micros think_time = 0;
    Micros op_time = 200;
    Micros validate_cost = 100;
    Micros merge_cost = 5;
    Micros storage_get_cost = 10;
    // Sim: give up (and report unfinished) after this much virtual time.
    Micros max_duration = 600'000'000;
    // Live only.
    std::uint16_t base_port = 0;
    std::optional<std::string> data_dir;
};

struct NodeSummary {
    std::string name;
    bool alive = true;
    EpochNumber applied_next = 0;
    std::string log_digest;  // chained over epochs [0, report.common_epochs)
    std::string vt_digest;
    TaasNodeCounters counters;
};

struct RunReport {
    std::string mode;
    std::string workload;
    std::string isolation;
    std::string consistency;
    std::uint32_t taas_nodes = 0;
    std::uint32_t storage_nodes = 0;
    std::uint32_t clients = 0;
    std::uint64_t seed = 0;
    bool finished = false;

    std::uint64_t posted = 0;
    std::uint64_t committed = 0;
    std::uint64_t aborted = 0;
    std::uint64_t abandoned = 0;
    std::array<std::uint64_t, kAbortReasonCount> aborts{};
    std::uint64_t ops = 0;

    Micros duration = 0;
    double txn_per_sec = 0;
    double committed_per_sec = 0;
    double ops_per_sec = 0;
    Percentiles txn_latency;
    Percentiles read_latency;

    EpochNumber common_epochs = 0;
    std::vector<EpochStat> epochs;  // from the first live node
    std::vector<NodeSummary> nodes;
    bool logs_equal = false;
    bool version_tables_equal = false;
    std::optional<EpochNumber> first_divergent_epoch;

    std::string storage_digest;
    std::string replay_digest;
    bool storage_matches_replay = false;
    std::uint64_t storage_records = 0;

    std::optional<std::int64_t> balance_expected;
    std::optional<std::int64_t> balance_actual;

    std::uint64_t messages = 0;
    std::uint64_t peer_messages = 0;
    std::string trace_hash;

    ClientCounters client_counters;

    bool balance_conserved() const { return !balance_expected || balance_expected == balance_actual; }
    bool consistent() const { return logs_equal && version_tables_equal && storage_matches_replay; }

    std::string to_text() const;
    nlohmann::json to_json() const;
};

// Replays `logs` (epochs 0..n-1 in order) into a plain key -> record map.
std::map<std::string, VersionedRecord> replay_logs(const std::vector<EpochLog>& logs);
// SHA-256 over put(record) in key order; KvStorage::state_digest's format.
Digest records_digest(const std::map<std::string, VersionedRecord>& records);

// Running cluster in the simulator, exposed for tests that drive it
// directly.
class SimCluster {
  public:
    explicit SimCluster(BenchOptions opts);

    SimWorld& world() { return world_; }
    const BenchOptions& options() const { return opts_; }
    const ClusterConfig& config() const { return cfg_; }
    TaasNode* node(std::uint32_t i);
    std::shared_ptr<DurableStore> store(std::uint32_t i) { return stores_.at(i); }
    std::shared_ptr<KvStorage> shard(std::uint32_t j) { return shards_.at(j); }
    ShardMap shard_map() const { return shard_map_; }

    // Endpoints of the TaaS nodes, for client options.
    std::vector<EndpointId> taas_endpoints() const;
    ClientOptions client_options(std::uint32_t client_id) const;

    // Runs the load phase to completion, including storage catch-up.
    bool load();
    // Adds the workload clients, schedules faults relative to now and
    // runs until every client finished (or max_duration).
    bool run_workload();
    // Runs until every live node and shard has applied the same epochs,
    // at least `min_epochs`.
    bool quiesce(EpochNumber min_epochs = 0, Micros timeout = 30'000'000);

    void apply_fault(const FaultEvent& e);
    RunReport report();

  private:
    void add_taas(std::uint32_t i);

    BenchOptions opts_;
    SimWorld world_;
    ClusterConfig cfg_;
    ShardMap shard_map_;
    std::vector<std::shared_ptr<DurableStore>> stores_;
    std::vector<std::shared_ptr<KvStorage>> shards_;
    std::vector<std::shared_ptr<ClientStats>> stats_;
    Micros measure_start_ = 0;
    bool finished_ = false;
};

RunReport run_sim(const BenchOptions& opts);
RunReport run_live(const BenchOptions& opts);

struct SweepRow {
    std::uint32_t taas_nodes = 0;
    std::uint64_t seed = 0;
    RunReport report;
};

std::vector<SweepRow> scaling_sweep(const BenchOptions& base, std::uint32_t min_nodes, std::uint32_t max_nodes,
                                    const std::vector<std::uint64_t>& seeds);
nlohmann::json sweep_json(const std::vector<SweepRow>& rows);
std::string sweep_table(const std::vector<SweepRow>& rows);

// Helpers shared with the node/storage process entry points.
ShardMap make_shard_map(const ClusterConfig& cfg);
std::vector<std::pair<std::string, std::string>> shard_ranges(const WorkloadSpec& spec, std::uint32_t shards);

}  // namespace taas
