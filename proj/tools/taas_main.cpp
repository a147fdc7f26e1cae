// taas: simulated and live benchmark runs, scaling sweeps, and the node and
// storage processes of a real cluster.

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "taas/bench.hpp"
#include "taas/socket_transport.hpp"

using namespace taas;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

void wait_for_signal() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

struct RunFlags {
    std::uint32_t taas_nodes = 3;
    std::uint32_t storage_nodes = 2;
    std::string workload = "ycsb";
    std::uint64_t txns = 10'000;
    std::uint32_t clients = 8;
    std::uint64_t seed = 1;
    std::string faults;
    std::string isolation = "si";
    std::string consistency = "strong";
    double epoch_ms = 10;
    std::string out;
    std::string json_out;
    std::string ack_mode = "persisted";
    bool sync = false;
    std::uint64_t keys = 0;
    double theta = 0.99;
    std::uint64_t accounts = 0;
    double think_ms = 0;
    double op_us = 200;
    std::string data_dir;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--taas-nodes", f.taas_nodes, "TaaS nodes")->check(CLI::Range(1, 64));
    cmd->add_option("--storage-nodes", f.storage_nodes, "storage shards")->check(CLI::Range(1, 64));
    cmd->add_option("--workload", f.workload, "ycsb|ycsb-hc|ycsb-ro|transfer|composite")
        ->check(CLI::IsMember({"ycsb", "ycsb-hc", "ycsb-ro", "transfer", "composite"}));
    cmd->add_option("--txns", f.txns, "transactions in total");
    cmd->add_option("--clients", f.clients, "closed-loop clients")->check(CLI::Range(1, 100000));
    cmd->add_option("--seed", f.seed, "seed for workload and network");
    cmd->add_option("--faults", f.faults, "scenario file")->check(CLI::ExistingFile);
    cmd->add_option("--isolation", f.isolation, "rc|rr|si|ssi");
    cmd->add_option("--consistency", f.consistency, "strong|stale-ok");
    cmd->add_option("--epoch-ms", f.epoch_ms, "epoch length in ms")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "write the text report here");
    cmd->add_option("--json", f.json_out, "write the JSON summary here");
    cmd->add_option("--ack-mode", f.ack_mode, "persisted|merged")->check(CLI::IsMember({"persisted", "merged"}));
    cmd->add_flag("--sync", f.sync, "seal the next epoch only after the previous merged");
    cmd->add_option("--keys", f.keys, "keys per keyspace");
    cmd->add_option("--theta", f.theta, "Zipfian theta");
    cmd->add_option("--accounts", f.accounts, "accounts for the transfer workload");
    cmd->add_option("--think-ms", f.think_ms, "client think time");
    cmd->add_option("--op-us", f.op_us, "sim: client execution time per operation");
    cmd->add_option("--data-dir", f.data_dir, "live: persist TaaS node state under this directory");
}

BenchOptions to_options(const RunFlags& f) {
    BenchOptions o;
    o.taas_nodes = f.taas_nodes;
    o.storage_nodes = f.storage_nodes;
    o.spec = WorkloadSpec::named(f.workload);
    o.spec.txn_count = f.txns;
    o.spec.clients = f.clients;
    o.spec.seed = f.seed;
    o.spec.zipf_theta = f.theta;
    if (f.keys) o.spec.keys = f.keys;
    if (f.accounts) o.spec.accounts = f.accounts;
    auto iso = parse_isolation(f.isolation);
    if (!iso) throw CLI::ValidationError("--isolation", "unknown level " + f.isolation);
    o.spec.isolation = *iso;
    auto cons = parse_consistency(f.consistency);
    if (!cons) throw CLI::ValidationError("--consistency", "unknown mode " + f.consistency);
    o.spec.consistency = *cons;
    o.seed = f.seed;
    o.epoch_interval = static_cast<Micros>(f.epoch_ms * 1000);
    o.ack_mode = f.ack_mode == "merged" ? AckMode::Merged : AckMode::Persisted;
    o.pipelined = !f.sync;
    o.think_time = static_cast<Micros>(f.think_ms * 1000);
    o.op_time = static_cast<Micros>(f.op_us);
    if (!f.faults.empty()) o.faults = FaultScenario::load(f.faults);
    if (!f.data_dir.empty()) o.data_dir = f.data_dir;
    o.spec.validate();
    return o;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << body;
}

int emit(const RunReport& r, const RunFlags& f) {
    auto text = r.to_text();
    std::cout << text;
    if (!f.out.empty()) write_file(f.out, text);
    if (!f.json_out.empty()) write_file(f.json_out, r.to_json().dump(2) + "\n");
    if (!r.finished) {
        std::cerr << "run did not finish\n";
        return 2;
    }
    if (!r.consistent() || !r.balance_conserved()) {
        std::cerr << "invariant violation: logs_equal=" << r.logs_equal << " vt_equal=" << r.version_tables_equal
                  << " storage_matches_replay=" << r.storage_matches_replay
                  << " balance_conserved=" << r.balance_conserved() << "\n";
        return 3;
    }
    return 0;
}

std::map<EndpointId, std::string> directory_of(const ClusterConfig& cfg) {
    std::map<EndpointId, std::string> d;
    for (const auto& m : cfg.nodes) d[taas_endpoint(m.id.value)] = m.address;
    for (const auto& s : cfg.storage) d[storage_endpoint(s.shard)] = s.address;
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TaaS cluster benchmark and node runner"};
    app.require_subcommand(1);

    RunFlags sim_flags, run_flags, sweep_flags;
    auto* sim = app.add_subcommand("sim", "deterministic simulated run");
    add_run_flags(sim, sim_flags);
    auto* run = app.add_subcommand("run", "live run over loopback TCP");
    add_run_flags(run, run_flags);

    auto* sweep = app.add_subcommand("sweep", "simulated scaling sweep over TaaS node counts");
    add_run_flags(sweep, sweep_flags);
    std::uint32_t min_nodes = 1, max_nodes = 5;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    sweep->add_option("--min-nodes", min_nodes)->check(CLI::Range(1, 64));
    sweep->add_option("--max-nodes", max_nodes)->check(CLI::Range(1, 64));
    sweep->add_option("--seeds", seeds, "one run per seed and size");

    auto* node = app.add_subcommand("node", "run one TaaS node");
    std::uint32_t node_id = 0;
    std::string config_path, isolation_default = "si", data_dir, durable = "on", node_ack = "persisted";
    double node_epoch_ms = 0;
    node->add_option("--node-id", node_id)->required();
    node->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    node->add_option("--epoch-ms", node_epoch_ms, "overrides epoch_ms of the config");
    node->add_option("--isolation-default", isolation_default, "accepted for config compatibility; every post carries its own level");
    node->add_option("--data-dir", data_dir);
    node->add_option("--durable", durable)->check(CLI::IsMember({"on", "off"}));
    node->add_option("--ack-mode", node_ack)->check(CLI::IsMember({"persisted", "merged"}));

    auto* storage = app.add_subcommand("storage", "run one storage shard");
    std::uint32_t shard = 0;
    std::string storage_config, shard_range, persist = "off", storage_dir = ".", table_workload;
    double cache_mb = 4;
    storage->add_option("--shard", shard)->required();
    storage->add_option("--config", storage_config)->required()->check(CLI::ExistingFile);
    storage->add_option("--shard-range", shard_range, "lo:hi, overriding the config");
    storage->add_option("--cache-mb", cache_mb, "record cache size, 0 disables");
    storage->add_option("--persist", persist)->check(CLI::IsMember({"on", "off"}));
    storage->add_option("--data-dir", storage_dir);
    storage->add_option("--workload", table_workload, "publish this workload's table descriptor");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return emit(run_sim(to_options(sim_flags)), sim_flags);
        if (run->parsed()) return emit(run_live(to_options(run_flags)), run_flags);
        if (sweep->parsed()) {
            if (min_nodes > max_nodes) throw CLI::ValidationError("--min-nodes", "above --max-nodes");
            auto rows = scaling_sweep(to_options(sweep_flags), min_nodes, max_nodes, seeds);
            auto table = sweep_table(rows);
            std::cout << table;
            if (!sweep_flags.out.empty()) write_file(sweep_flags.out, table);
            if (!sweep_flags.json_out.empty()) write_file(sweep_flags.json_out, sweep_json(rows).dump(2) + "\n");
            return 0;
        }
        if (node->parsed()) {
            auto cfg = ClusterConfig::load(config_path);
            if (node_epoch_ms > 0) cfg.epoch_interval = static_cast<Micros>(node_epoch_ms * 1000);
            cfg.validate();
            if (!parse_isolation(isolation_default)) throw CLI::ValidationError("--isolation-default", "unknown level");
            const Member* self = nullptr;
            for (const auto& m : cfg.nodes) {
                if (m.id.value == node_id) self = &m;
            }
            if (self == nullptr) throw CLI::ValidationError("--node-id", "not in the config");
            std::shared_ptr<DurableStore> store;
            if (!data_dir.empty()) {
                store = DurableStore::open(std::filesystem::path(data_dir) / ("taas" + std::to_string(node_id)),
                                           durable == "on");
            } else {
                store = std::make_shared<DurableStore>();
            }
            TaasNodeOptions no;
            no.cluster = cfg;
            no.id = NodeId{node_id};
            no.ack_mode = node_ack == "merged" ? AckMode::Merged : AckMode::Persisted;
            no.validate_cost = 0;
            no.merge_cost = 0;
            auto listen = "0.0.0.0:" + std::to_string(split_address(self->address).second);
            LiveHost host(taas_endpoint(node_id), listen, directory_of(cfg),
                          [no, store] { return std::make_unique<TaasNode>(no, store); });
            host.start();
            std::cerr << "taas node " << node_id << " listening on " << self->address << "\n";
            wait_for_signal();
            host.stop();
            return 0;
        }
        if (storage->parsed()) {
            auto cfg = ClusterConfig::load(storage_config);
            const StorageMember* self = nullptr;
            for (const auto& s : cfg.storage) {
                if (s.shard == shard) self = &s;
            }
            if (self == nullptr) throw CLI::ValidationError("--shard", "not in the config");
            KvStorageOptions so;
            so.range = {self->range_lo, self->range_hi};
            if (!shard_range.empty()) {
                auto colon = shard_range.find(':');
                if (colon == std::string::npos) throw CLI::ValidationError("--shard-range", "expected lo:hi");
                so.range = {shard_range.substr(0, colon), shard_range.substr(colon + 1)};
            }
            // Rough record footprint of 128 bytes.
            so.cache_entries = static_cast<std::size_t>(cache_mb * 1024 * 1024 / 128);
            if (persist == "on") so.persist_path = std::filesystem::path(storage_dir) / ("shard" + std::to_string(shard) + ".log");
            auto kv = std::make_shared<KvStorage>(so);
            kv->register_meta("shards", make_shard_map(cfg).encode());
            if (!table_workload.empty()) kv->register_meta("ycsb.table", WorkloadSpec::named(table_workload).table().encode());
            auto listen = "0.0.0.0:" + std::to_string(split_address(self->address).second);
            LiveHost host(storage_endpoint(shard), listen, directory_of(cfg), [shard, kv] {
                return std::make_unique<StorageNode>(StorageNodeOptions{shard, 0, 0}, kv);
            });
            host.start();
            std::cerr << "storage shard " << shard << " listening on " << self->address << "\n";
            wait_for_signal();
            host.stop();
            return 0;
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
