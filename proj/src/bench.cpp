#include "taas/bench.hpp"

#include <sys/socket.h>
#include <netinet/in.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "taas/socket_transport.hpp"

namespace taas {

// ------------------------------------------------------------ scenarios

std::optional<EndpointId> parse_endpoint_name(std::string_view name) {
    auto number = [](std::string_view digits) -> std::optional<std::uint32_t> {
        if (digits.empty() || digits.size() > 6) return std::nullopt;
        std::uint32_t v = 0;
        for (char c : digits) {
            if (c < '0' || c > '9') return std::nullopt;
            v = v * 10 + static_cast<std::uint32_t>(c - '0');
        }
        return v;
    };
    for (auto [prefix, make] : {std::pair<std::string_view, EndpointId (*)(std::uint32_t)>{"taas", taas_endpoint},
                                {"storage", storage_endpoint},
                                {"client", client_endpoint}}) {
        if (name.substr(0, prefix.size()) == prefix) {
            if (auto n = number(name.substr(prefix.size()))) return make(*n);
        }
    }
    return std::nullopt;
}

std::string endpoint_name(EndpointId id) {
    if (id < kStorageEndpointBase) return "taas" + std::to_string(id);
    if (id < kClientEndpointBase) return "storage" + std::to_string(id - kStorageEndpointBase);
    return "client" + std::to_string(id - kClientEndpointBase);
}

FaultScenario FaultScenario::parse(std::string_view text) {
    FaultScenario out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("scenario line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<std::string> words;
        for (std::string w; ls >> w;) words.push_back(w);
        if (words.empty()) continue;
        if (words.size() < 3) fail("expected <ms> <event> <endpoint>...");
        FaultEvent e;
        try {
            std::size_t used = 0;
            double ms = std::stod(words[0], &used);
            if (used != words[0].size() || ms < 0) fail("bad time " + words[0]);
            e.at = static_cast<Micros>(ms * 1000);
        } catch (const std::logic_error&) {
            fail("bad time " + words[0]);
        }
        static const std::map<std::string, FaultEvent::Kind> kinds = {
            {"kill", FaultEvent::Kind::Kill},         {"restart", FaultEvent::Kind::Restart},
            {"wipe", FaultEvent::Kind::Wipe},         {"isolate", FaultEvent::Kind::Isolate},
            {"rejoin", FaultEvent::Kind::Rejoin},     {"partition", FaultEvent::Kind::Partition},
            {"heal", FaultEvent::Kind::Heal},         {"drop", FaultEvent::Kind::Drop},
        };
        auto k = kinds.find(words[1]);
        if (k == kinds.end()) fail("unknown event " + words[1]);
        e.kind = k->second;
        auto ep = [&](const std::string& w) {
            auto id = parse_endpoint_name(w);
            if (!id) fail("bad endpoint " + w);
            return *id;
        };
        e.a = ep(words[2]);
        std::size_t want = 3;
        if (e.kind == FaultEvent::Kind::Partition || e.kind == FaultEvent::Kind::Heal) want = 4;
        if (e.kind == FaultEvent::Kind::Drop) want = 5;
        if (words.size() != want) fail("expected " + std::to_string(want) + " fields");
        if (want >= 4) e.b = ep(words[3]);
        if (want == 5) {
            try {
                e.rate = std::stod(words[4]);
            } catch (const std::logic_error&) {
                fail("bad rate " + words[4]);
            }
            if (e.rate < 0 || e.rate > 1) fail("rate outside [0, 1]");
        }
        if ((e.kind == FaultEvent::Kind::Wipe || e.kind == FaultEvent::Kind::Kill ||
             e.kind == FaultEvent::Kind::Restart) &&
            e.a >= kClientEndpointBase) {
            fail("clients cannot be killed");
        }
        out.events.push_back(e);
    }
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.at < b.at; });
    return out;
}

FaultScenario FaultScenario::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read scenario " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

Percentiles Percentiles::of(std::vector<Micros> samples) {
    Percentiles p;
    p.count = samples.size();
    if (samples.empty()) return p;
    std::sort(samples.begin(), samples.end());
    auto at = [&](double q) {
        auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size()))) - 1;
        return static_cast<double>(samples[std::min(idx, samples.size() - 1)]);
    };
    p.p50 = at(0.50);
    p.p95 = at(0.95);
    p.p99 = at(0.99);
    p.mean = static_cast<double>(std::accumulate(samples.begin(), samples.end(), std::int64_t{0})) /
             static_cast<double>(samples.size());
    return p;
}

// ------------------------------------------------------------ clients

WorkloadClient::WorkloadClient(WorkloadClientOptions opts, std::shared_ptr<ClientStats> stats)
    : opts_(std::move(opts)),
      stats_(std::move(stats)),
      core_(opts_.client),
      gen_(opts_.spec, opts_.index),
      jitter_(opts_.client.seed ^ 0x5bd1e995ULL) {}

void WorkloadClient::on_start(Runtime& rt) {
    core_.start(rt);
    next_txn(rt);
    arm(rt);
}

void WorkloadClient::on_message(Runtime& rt, EndpointId from, ByteView message) {
    core_.on_message(rt, from, message);
    arm(rt);
}

void WorkloadClient::on_timer(Runtime& rt) {
    core_.on_timer(rt);
    if (resume_at_ && rt.now() >= *resume_at_) {
        resume_at_.reset();
        next_txn(rt);
    }
    arm(rt);
}

void WorkloadClient::arm(Runtime& rt) {
    auto d = core_.next_deadline();
    if (resume_at_ && (!d || *resume_at_ < *d)) d = resume_at_;
    if (d) rt.wake_at(*d);
    stats_->counters = core_.counters();
}

void WorkloadClient::finish(Runtime&) { stats_->done = true; }

void WorkloadClient::next_txn(Runtime& rt) {
    if (issued_ >= opts_.quota) {
        finish(rt);
        return;
    }
    ++issued_;
    plan_ = gen_.next();
    op_ = 0;
    begin_at_ = rt.now();
    if (stats_->first_begin < 0) stats_->first_begin = begin_at_;
    ++stats_->started;
    session_.reset();
    composite_.reset();
    if (plan_.type == TxnPlan::Type::Composite) {
        composite_ = core_.begin_composite(opts_.spec.isolation, opts_.spec.consistency);
    } else {
        session_ = core_.begin(opts_.spec.isolation, opts_.spec.consistency);
    }
    in_txn_ = true;
    step(rt);
}

void WorkloadClient::step(Runtime& rt) {
    // Reads served from the session buffer complete synchronously; the loop
    // keeps going until a read has to wait for storage.
    while (op_ < plan_.ops.size()) {
        const Op& op = plan_.ops[op_];
        TxnSession& s = composite_ ? composite_->sub(op.label) : *session_;
        if (opts_.op_time > 0) rt.charge(std::uniform_int_distribution<Micros>(0, 2 * opts_.op_time)(jitter_));
        if (op.kind == Op::Kind::Write) {
            s.write(op.key, op.value);
            ++op_;
            continue;
        }
        auto index = op_;
        auto issued_at = rt.now();
        bool waiting = true;
        auto sync = std::make_shared<bool>(true);
        core_.read(rt, s, op.key, [this, index, issued_at, sync, &s](Runtime& r, const ReadResult& res) {
            if (!res.ok) {
                ++stats_->abandoned;
                in_txn_ = false;
                op_ = plan_.ops.size() + 1;
                if (!*sync) next_txn(r);
                return;
            }
            if (!*sync) stats_->read_latency.push_back(r.now() - issued_at);
            const Op& o = plan_.ops[index];
            if (o.kind == Op::Kind::Add) {
                std::int64_t balance = 0;
                if (res.value) balance = std::stoll(*res.value);
                s.write(o.key, std::to_string(balance + o.delta));
            }
            op_ = index + 1;
            if (!*sync) step(r);
        });
        *sync = false;
        if (op_ > plan_.ops.size()) {
            // Abandoned synchronously.
            next_txn(rt);
            return;
        }
        waiting = op_ == index;
        if (waiting) return;
    }
    if (op_ != plan_.ops.size()) return;
    op_ = plan_.ops.size() + 2;  // committing

    ++stats_->posted;
    auto ops = plan_.ops.size();
    auto net = plan_.net_delta;
    auto begun = begin_at_;
    auto on_verdict = [this, ops, net, begun](Runtime& r, const TxnVerdict& v) {
        in_txn_ = false;
        stats_->ops += ops;
        stats_->txn_latency.push_back(r.now() - begun);
        stats_->last_verdict = r.now();
        if (v.decision == Decision::Committed) {
            ++stats_->committed;
            stats_->committed_ops += ops;
            stats_->committed_net_delta += net;
        } else {
            ++stats_->aborts[static_cast<std::size_t>(v.reason)];
        }
        if (opts_.think_time > 0) {
            resume_at_ = r.now() + std::uniform_int_distribution<Micros>(0, 2 * opts_.think_time)(jitter_);
        } else {
            next_txn(r);
        }
    };
    if (composite_) {
        core_.commit_composite(rt, std::move(composite_), std::move(on_verdict));
    } else {
        core_.commit(rt, session_, std::move(on_verdict));
    }
}

LoaderClient::LoaderClient(ClientOptions opts, WorkloadSpec spec, std::shared_ptr<bool> done, std::size_t batch,
                           std::size_t parallel)
    : core_(std::move(opts)), spec_(std::move(spec)), done_(std::move(done)), batch_(batch), parallel_(parallel) {}

void LoaderClient::on_start(Runtime& rt) {
    core_.start(rt);
    const auto n = spec_.table().keys;
    while (inflight_ < parallel_ && next_ < n) {
        auto first = next_;
        next_ = std::min<std::uint64_t>(n, next_ + batch_);
        issue(rt, first);
    }
    if (n == 0) *done_ = true;
    arm(rt);
}

void LoaderClient::issue(Runtime& rt, std::uint64_t first) {
    const auto table = spec_.table();
    auto last = std::min<std::uint64_t>(table.keys, first + batch_);
    auto s = core_.begin(IsolationLevel::ReadCommitted, ConsistencyMode::Strong);
    for (auto i = first; i < last; ++i) s->write(table.key(i), spec_.initial_value(i));
    ++inflight_;
    core_.commit(rt, s, [this, first](Runtime& r, const TxnVerdict& v) {
        --inflight_;
        if (v.decision != Decision::Committed) {
            issue(r, first);
            return;
        }
        const auto n = spec_.table().keys;
        if (next_ < n) {
            auto f = next_;
            next_ = std::min<std::uint64_t>(n, next_ + batch_);
            issue(r, f);
        } else if (inflight_ == 0) {
            *done_ = true;
        }
    });
}

void LoaderClient::on_message(Runtime& rt, EndpointId from, ByteView message) {
    core_.on_message(rt, from, message);
    arm(rt);
}

void LoaderClient::on_timer(Runtime& rt) {
    core_.on_timer(rt);
    arm(rt);
}

void LoaderClient::arm(Runtime& rt) {
    if (auto d = core_.next_deadline()) rt.wake_at(*d);
}

// ------------------------------------------------------------ oracles

std::map<std::string, VersionedRecord> replay_logs(const std::vector<EpochLog>& logs) {
    std::map<std::string, VersionedRecord> out;
    for (const auto& log : logs) {
        for (std::size_t i = 0; i < log.committed.size(); ++i) {
            for (const auto& w : log.committed[i].writes) {
                out[w.key] = VersionedRecord{w.key, w.value, Version{log.epoch, static_cast<std::uint32_t>(i)}};
            }
        }
    }
    return out;
}

Digest records_digest(const std::map<std::string, VersionedRecord>& records) {
    Sha256 h;
    for (const auto& [k, rec] : records) {
        ByteWriter w;
        put(w, rec);
        h.update(w.bytes());
    }
    return h.finish();
}

std::vector<std::pair<std::string, std::string>> shard_ranges(const WorkloadSpec& spec, std::uint32_t shards) {
    auto t = spec.table();
    return split_key_ranges(t.key_prefix, t.keys, static_cast<int>(t.key_width), shards);
}

ShardMap make_shard_map(const ClusterConfig& cfg) {
    ShardMap m;
    for (const auto& s : cfg.storage) m.entries.push_back({s.shard, storage_endpoint(s.shard), {s.range_lo, s.range_hi}});
    return m;
}

// ------------------------------------------------------------ reports

namespace {

struct NodeView {
    std::string name;
    bool alive = false;
    EpochNumber applied_next = 0;
    EpochNumber log_begin = 0;
    std::vector<EpochLog> logs;  // [log_begin, applied_next)
    Digest vt{};
    TaasNodeCounters counters;
    std::vector<EpochStat> stats;
};

NodeView view_of(const std::string& name, const TaasNode* node, const DurableStore& store) {
    NodeView v;
    v.name = name;
    if (node == nullptr) return v;
    v.alive = true;
    v.applied_next = node->applied_next();
    v.log_begin = store.log_begin();
    for (EpochNumber e = v.log_begin; e < v.applied_next; ++e) {
        const auto* log = store.log(e);
        if (log == nullptr) break;
        v.logs.push_back(*log);
    }
    v.vt = node->version_table().digest();
    v.counters = node->counters();
    v.stats = node->epoch_stats();
    return v;
}

void fill_client_side(RunReport& r, const std::vector<std::shared_ptr<ClientStats>>& stats) {
    std::vector<Micros> txn_lat, read_lat;
    Micros first = -1, last = 0;
    for (const auto& s : stats) {
        r.posted += s->posted;
        r.committed += s->committed;
        r.abandoned += s->abandoned;
        for (int i = 0; i < kAbortReasonCount; ++i) r.aborts[i] += s->aborts[i];
        r.ops += s->ops;
        txn_lat.insert(txn_lat.end(), s->txn_latency.begin(), s->txn_latency.end());
        read_lat.insert(read_lat.end(), s->read_latency.begin(), s->read_latency.end());
        if (s->first_begin >= 0 && (first < 0 || s->first_begin < first)) first = s->first_begin;
        last = std::max(last, s->last_verdict);
        auto& c = r.client_counters;
        c.storage_reads += s->counters.storage_reads;
        c.buffered_reads += s->counters.buffered_reads;
        c.read_retries += s->counters.read_retries;
        c.posts += s->counters.posts;
        c.reposts += s->counters.reposts;
        c.queries += s->counters.queries;
        c.duplicate_verdicts += s->counters.duplicate_verdicts;
    }
    for (auto a : r.aborts) r.aborted += a;
    r.txn_latency = Percentiles::of(std::move(txn_lat));
    r.read_latency = Percentiles::of(std::move(read_lat));
    r.duration = first >= 0 ? last - first : 0;
    if (r.duration > 0) {
        double secs = static_cast<double>(r.duration) / 1e6;
        r.txn_per_sec = static_cast<double>(r.committed + r.aborted) / secs;
        r.committed_per_sec = static_cast<double>(r.committed) / secs;
        r.ops_per_sec = static_cast<double>(r.ops) / secs;
    }
}

void fill_cluster_side(RunReport& r, const std::vector<NodeView>& views,
                       const std::vector<std::map<std::string, VersionedRecord>>& shard_records,
                       const std::vector<std::shared_ptr<ClientStats>>& stats, const BenchOptions& opts) {
    std::vector<const NodeView*> alive;
    for (const auto& v : views) {
        if (v.alive) alive.push_back(&v);
    }
    EpochNumber hi = 0, lo = 0;
    if (!alive.empty()) {
        hi = alive.front()->applied_next;
        for (auto* v : alive) {
            hi = std::min(hi, v->applied_next);
            lo = std::max(lo, v->log_begin);
        }
    }
    r.common_epochs = hi;

    r.logs_equal = !alive.empty();
    for (EpochNumber e = lo; e < hi && r.logs_equal; ++e) {
        const auto& ref = alive.front()->logs[e - alive.front()->log_begin];
        for (auto* v : alive) {
            if (v->logs.size() <= e - v->log_begin || v->logs[e - v->log_begin].digest != ref.digest) {
                r.logs_equal = false;
                r.first_divergent_epoch = e;
                break;
            }
        }
    }
    r.version_tables_equal = !alive.empty();
    bool same_applied = true;
    for (auto* v : alive) {
        if (v->vt != alive.front()->vt) r.version_tables_equal = false;
        if (v->applied_next != hi) same_applied = false;
    }
    if (!same_applied) r.version_tables_equal = false;

    for (const auto& v : views) {
        NodeSummary n;
        n.name = v.name;
        n.alive = v.alive;
        n.applied_next = v.applied_next;
        n.counters = v.counters;
        if (v.alive) {
            Sha256 chain;
            for (EpochNumber e = lo; e < hi && e - v.log_begin < v.logs.size(); ++e) {
                chain.update(v.logs[e - v.log_begin].digest);
            }
            n.log_digest = to_hex(chain.finish());
            n.vt_digest = to_hex(v.vt);
        }
        r.nodes.push_back(std::move(n));
    }
    if (!alive.empty()) r.epochs = alive.front()->stats;

    std::map<std::string, VersionedRecord> storage;
    for (const auto& recs : shard_records) storage.insert(recs.begin(), recs.end());
    r.storage_records = storage.size();
    r.storage_digest = to_hex(records_digest(storage));
    for (auto* v : alive) {
        if (v->log_begin != 0) continue;
        std::vector<EpochLog> prefix(v->logs.begin(), v->logs.begin() + static_cast<std::ptrdiff_t>(hi));
        r.replay_digest = to_hex(records_digest(replay_logs(prefix)));
        r.storage_matches_replay = r.replay_digest == r.storage_digest;
        break;
    }

    if (opts.spec.kind == WorkloadKind::TransferDeposit) {
        std::int64_t expected = opts.preload ? static_cast<std::int64_t>(opts.spec.accounts) * opts.spec.initial_balance
                                             : 0;
        for (const auto& s : stats) expected += s->committed_net_delta;
        std::int64_t actual = 0;
        for (const auto& [k, rec] : storage) {
            if (rec.value) actual += std::stoll(*rec.value);
        }
        r.balance_expected = expected;
        r.balance_actual = actual;
    }
}

RunReport base_report(const BenchOptions& opts, const char* mode) {
    RunReport r;
    r.mode = mode;
    r.workload = opts.spec.name;
    r.isolation = std::string(to_string(opts.spec.isolation));
    r.consistency = std::string(to_string(opts.spec.consistency));
    r.taas_nodes = opts.taas_nodes;
    r.storage_nodes = opts.storage_nodes;
    r.clients = opts.spec.clients;
    r.seed = opts.seed;
    return r;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

ClusterConfig sim_config(const BenchOptions& opts) {
    auto cfg = ClusterConfig::local(opts.taas_nodes, opts.storage_nodes, opts.epoch_interval, opts.base_port);
    auto ranges = shard_ranges(opts.spec, opts.storage_nodes);
    for (std::uint32_t j = 0; j < opts.storage_nodes; ++j) {
        cfg.storage[j].range_lo = ranges[j].first;
        cfg.storage[j].range_hi = ranges[j].second;
    }
    cfg.validate();
    return cfg;
}

std::shared_ptr<KvStorage> make_shard(const BenchOptions& opts, const ClusterConfig& cfg, std::uint32_t j,
                                      const ShardMap& map) {
    KvStorageOptions so;
    so.range = {cfg.storage[j].range_lo, cfg.storage[j].range_hi};
    auto s = std::make_shared<KvStorage>(so);
    s->register_meta("shards", map.encode());
    s->register_meta("ycsb.table", opts.spec.table().encode());
    return s;
}

TaasNodeOptions node_options(const BenchOptions& opts, const ClusterConfig& cfg, std::uint32_t i) {
    TaasNodeOptions no;
    no.cluster = cfg;
    no.id = NodeId{i};
    no.ack_mode = opts.ack_mode;
    no.pipelined = opts.pipelined;
    no.validate_cost = opts.validate_cost;
    no.merge_cost = opts.merge_cost;
    no.merge_delay = opts.merge_delay;
    return no;
}

std::vector<std::uint64_t> quotas(const WorkloadSpec& spec) {
    std::vector<std::uint64_t> q(spec.clients, spec.txn_count / spec.clients);
    for (std::uint64_t c = 0; c < spec.txn_count % spec.clients; ++c) ++q[c];
    return q;
}

}  // namespace

std::string RunReport::to_text() const {
    std::ostringstream o;
    o << "mode " << mode << "\n";
    o << "workload " << workload << "\n";
    o << "isolation " << isolation << "\n";
    o << "consistency " << consistency << "\n";
    o << "taas_nodes " << taas_nodes << "\n";
    o << "storage_nodes " << storage_nodes << "\n";
    o << "clients " << clients << "\n";
    o << "seed " << seed << "\n";
    o << "finished " << (finished ? "yes" : "no") << "\n";
    o << "posted " << posted << "\n";
    o << "committed " << committed << "\n";
    o << "aborted " << aborted << "\n";
    for (int i = 1; i < kAbortReasonCount; ++i) {
        o << "aborted." << to_string(static_cast<AbortReason>(i)) << " " << aborts[i] << "\n";
    }
    o << "abandoned " << abandoned << "\n";
    o << "ops " << ops << "\n";
    o << "duration_us " << duration << "\n";
    o << "txn_per_sec " << fmt_double(txn_per_sec) << "\n";
    o << "committed_per_sec " << fmt_double(committed_per_sec) << "\n";
    o << "ops_per_sec " << fmt_double(ops_per_sec) << "\n";
    o << "txn_latency_us p50 " << fmt_double(txn_latency.p50) << " p95 " << fmt_double(txn_latency.p95) << " p99 "
      << fmt_double(txn_latency.p99) << " mean " << fmt_double(txn_latency.mean) << "\n";
    o << "read_latency_us p50 " << fmt_double(read_latency.p50) << " p95 " << fmt_double(read_latency.p95) << " p99 "
      << fmt_double(read_latency.p99) << " mean " << fmt_double(read_latency.mean) << "\n";
    o << "client.reposts " << client_counters.reposts << "\n";
    o << "client.queries " << client_counters.queries << "\n";
    o << "client.read_retries " << client_counters.read_retries << "\n";
    o << "common_epochs " << common_epochs << "\n";
    for (const auto& n : nodes) {
        o << "node " << n.name << " alive " << (n.alive ? "yes" : "no") << " applied_next " << n.applied_next
          << " log_digest " << n.log_digest << " vt_digest " << n.vt_digest << " early_aborts "
          << n.counters.early_aborts << " retransmits " << n.counters.retransmits << " recoveries "
          << n.counters.recoveries << "\n";
    }
    o << "logs_equal " << (logs_equal ? "yes" : "no") << "\n";
    if (first_divergent_epoch) o << "first_divergent_epoch " << *first_divergent_epoch << "\n";
    o << "version_tables_equal " << (version_tables_equal ? "yes" : "no") << "\n";
    o << "storage_records " << storage_records << "\n";
    o << "storage_digest " << storage_digest << "\n";
    o << "replay_digest " << replay_digest << "\n";
    o << "storage_matches_replay " << (storage_matches_replay ? "yes" : "no") << "\n";
    if (balance_expected) {
        o << "balance_expected " << *balance_expected << "\n";
        o << "balance_actual " << *balance_actual << "\n";
        o << "balance_conserved " << (balance_conserved() ? "yes" : "no") << "\n";
    }
    o << "messages " << messages << "\n";
    o << "peer_messages " << peer_messages << "\n";
    if (!trace_hash.empty()) o << "trace_hash " << trace_hash << "\n";
    for (const auto& e : epochs) {
        if (e.committed == 0 && e.aborted == 0) continue;
        o << "epoch " << e.epoch << " committed " << e.committed << " aborted " << e.aborted << " merge_lag_us "
          << (e.merged_at - e.sealed_at) << "\n";
    }
    return o.str();
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json j;
    j["mode"] = mode;
    j["workload"] = workload;
    j["isolation"] = isolation;
    j["consistency"] = consistency;
    j["taas_nodes"] = taas_nodes;
    j["storage_nodes"] = storage_nodes;
    j["clients"] = clients;
    j["seed"] = seed;
    j["finished"] = finished;
    j["posted"] = posted;
    j["committed"] = committed;
    j["aborted"] = aborted;
    nlohmann::json reasons;
    for (int i = 1; i < kAbortReasonCount; ++i) reasons[std::string(to_string(static_cast<AbortReason>(i)))] = aborts[i];
    j["aborts_by_reason"] = reasons;
    j["abandoned"] = abandoned;
    j["ops"] = ops;
    j["duration_us"] = duration;
    j["txn_per_sec"] = txn_per_sec;
    j["committed_per_sec"] = committed_per_sec;
    j["ops_per_sec"] = ops_per_sec;
    auto pct = [](const Percentiles& p) {
        return nlohmann::json{{"p50", p.p50}, {"p95", p.p95}, {"p99", p.p99}, {"mean", p.mean}, {"count", p.count}};
    };
    j["txn_latency_us"] = pct(txn_latency);
    j["read_latency_us"] = pct(read_latency);
    j["common_epochs"] = common_epochs;
    j["logs_equal"] = logs_equal;
    j["version_tables_equal"] = version_tables_equal;
    if (first_divergent_epoch) j["first_divergent_epoch"] = *first_divergent_epoch;
    j["storage_digest"] = storage_digest;
    j["replay_digest"] = replay_digest;
    j["storage_matches_replay"] = storage_matches_replay;
    j["storage_records"] = storage_records;
    if (balance_expected) {
        j["balance_expected"] = *balance_expected;
        j["balance_actual"] = *balance_actual;
    }
    auto& jn = j["nodes"] = nlohmann::json::array();
    for (const auto& n : nodes) {
        jn.push_back({{"name", n.name},
                      {"alive", n.alive},
                      {"applied_next", n.applied_next},
                      {"log_digest", n.log_digest},
                      {"vt_digest", n.vt_digest},
                      {"early_aborts", n.counters.early_aborts},
                      {"retransmits", n.counters.retransmits},
                      {"quorum_failures", n.counters.quorum_failures},
                      {"recoveries", n.counters.recoveries}});
    }
    auto& je = j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs) {
        je.push_back({{"epoch", e.epoch},
                      {"committed", e.committed},
                      {"aborted", e.aborted},
                      {"sealed_at", e.sealed_at},
                      {"merged_at", e.merged_at}});
    }
    j["messages"] = messages;
    j["peer_messages"] = peer_messages;
    if (!trace_hash.empty()) j["trace_hash"] = trace_hash;
    return j;
}

// ------------------------------------------------------------ simulation

SimCluster::SimCluster(BenchOptions opts) : opts_(std::move(opts)), world_(opts_.seed), cfg_(sim_config(opts_)) {
    opts_.spec.validate();
    shard_map_ = make_shard_map(cfg_);
    world_.set_default_link(opts_.link);
    for (std::uint32_t j = 0; j < opts_.storage_nodes; ++j) {
        shards_.push_back(make_shard(opts_, cfg_, j, shard_map_));
        world_.add(storage_endpoint(j), [this, j] {
            return std::make_unique<StorageNode>(StorageNodeOptions{j, opts_.storage_get_cost, 2}, shards_[j]);
        });
    }
    for (std::uint32_t i = 0; i < opts_.taas_nodes; ++i) {
        stores_.push_back(std::make_shared<DurableStore>());
        add_taas(i);
    }
}

void SimCluster::add_taas(std::uint32_t i) {
    world_.add(taas_endpoint(i), [this, i] { return std::make_unique<TaasNode>(node_options(opts_, cfg_, i), stores_[i]); });
}

TaasNode* SimCluster::node(std::uint32_t i) { return world_.actor_as<TaasNode>(taas_endpoint(i)); }

std::vector<EndpointId> SimCluster::taas_endpoints() const {
    std::vector<EndpointId> out;
    for (std::uint32_t i = 0; i < opts_.taas_nodes; ++i) out.push_back(taas_endpoint(i));
    return out;
}

ClientOptions SimCluster::client_options(std::uint32_t client_id) const {
    ClientOptions co;
    co.client_id = client_id;
    co.taas_nodes = taas_endpoints();
    co.meta_endpoint = storage_endpoint(0);
    co.default_isolation = opts_.spec.isolation;
    co.default_consistency = opts_.spec.consistency;
    co.seed = opts_.seed * 1000003 + client_id;
    // Timeouts scale with the epoch so slow epochs are not mistaken for loss.
    co.commit_timeout = std::max<Micros>(co.commit_timeout, 20 * opts_.epoch_interval);
    return co;
}

bool SimCluster::load() {
    if (!opts_.preload) return true;
    auto done = std::make_shared<bool>(false);
    auto id = opts_.spec.clients;
    world_.add(client_endpoint(id), [this, id, done] {
        return std::make_unique<LoaderClient>(client_options(id), opts_.spec, done);
    });
    if (!world_.run_until([&] { return *done; }, world_.now() + opts_.max_duration)) return false;
    world_.kill(client_endpoint(id));
    return quiesce();
}

bool SimCluster::quiesce(EpochNumber min_epochs, Micros timeout) {
    EpochNumber target = min_epochs;
    for (std::uint32_t i = 0; i < opts_.taas_nodes; ++i) {
        if (auto* n = node(i)) target = std::max(target, n->applied_next() + 1);
    }
    auto settled = [&] {
        std::optional<EpochNumber> applied;
        for (std::uint32_t i = 0; i < opts_.taas_nodes; ++i) {
            auto* n = node(i);
            if (n == nullptr) continue;
            if (n->phase() != TaasNode::Phase::Running) return false;
            if (applied && *applied != n->applied_next()) return false;
            applied = n->applied_next();
        }
        if (!applied || *applied < target) return false;
        for (std::uint32_t j = 0; j < opts_.storage_nodes; ++j) {
            if (!world_.alive(storage_endpoint(j))) continue;
            if (shards_[j]->applied_next() != *applied) return false;
        }
        return true;
    };
    return world_.run_until(settled, world_.now() + timeout);
}

void SimCluster::apply_fault(const FaultEvent& e) {
    using K = FaultEvent::Kind;
    switch (e.kind) {
        case K::Kill:
            world_.kill(e.a);
            break;
        case K::Restart:
            if (!world_.alive(e.a)) world_.restart(e.a);
            break;
        case K::Wipe:
            world_.kill(e.a);
            if (is_taas_endpoint(e.a)) {
                stores_.at(e.a)->wipe();
            } else if (e.a < kClientEndpointBase) {
                auto j = e.a - kStorageEndpointBase;
                shards_.at(j) = make_shard(opts_, cfg_, j, shard_map_);
            }
            break;
        case K::Isolate:
            world_.isolate(e.a);
            break;
        case K::Rejoin:
            world_.rejoin(e.a);
            break;
        case K::Partition:
            world_.partition(e.a, e.b);
            break;
        case K::Heal:
            world_.heal(e.a, e.b);
            break;
        case K::Drop: {
            auto m = opts_.link;
            m.drop_rate = e.rate;
            world_.set_link(e.a, e.b, m);
            world_.set_link(e.b, e.a, m);
            break;
        }
    }
}

bool SimCluster::run_workload() {
    measure_start_ = world_.now();
    for (const auto& e : opts_.faults.events) {
        world_.at(measure_start_ + e.at, [this, e] { apply_fault(e); });
    }
    auto q = quotas(opts_.spec);
    for (std::uint32_t c = 0; c < opts_.spec.clients; ++c) {
        auto stats = std::make_shared<ClientStats>();
        stats_.push_back(stats);
        WorkloadClientOptions wo;
        wo.client = client_options(c);
        wo.spec = opts_.spec;
        wo.index = c;
        wo.quota = q[c];
        wo.think_time = opts_.think_time;
        wo.op_time = opts_.op_time;
        world_.add(client_endpoint(c), [wo, stats] { return std::make_unique<WorkloadClient>(wo, stats); });
    }
    auto all_done = [&] {
        return std::all_of(stats_.begin(), stats_.end(), [](const auto& s) { return s->done; });
    };
    finished_ = world_.run_until(all_done, world_.now() + opts_.max_duration);
    return finished_;
}

RunReport SimCluster::report() {
    auto r = base_report(opts_, "sim");
    r.finished = finished_;
    fill_client_side(r, stats_);
    std::vector<NodeView> views;
    for (std::uint32_t i = 0; i < opts_.taas_nodes; ++i) {
        views.push_back(view_of(endpoint_name(taas_endpoint(i)), node(i), *stores_[i]));
    }
    std::vector<std::map<std::string, VersionedRecord>> recs;
    for (auto& s : shards_) recs.push_back(s->records());
    fill_cluster_side(r, views, recs, stats_, opts_);
    r.messages = world_.stats().delivered;
    r.peer_messages = world_.stats().peer_messages;
    r.trace_hash = to_hex(world_.trace_hash());
    return r;
}

RunReport run_sim(const BenchOptions& opts) {
    SimCluster c(opts);
    bool ok = c.load() && c.run_workload();
    if (ok) ok = c.quiesce();
    auto r = c.report();
    r.finished = ok;
    return r;
}

// ------------------------------------------------------------ live

namespace {

std::vector<std::uint16_t> free_ports(std::size_t n) {
    std::vector<int> fds;
    std::vector<std::uint16_t> ports;
    for (std::size_t i = 0; i < n; ++i) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        if (fd < 0 || ::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
            throw std::runtime_error("cannot reserve a loopback port");
        }
        socklen_t len = sizeof(sa);
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
        ports.push_back(ntohs(sa.sin_port));
        fds.push_back(fd);
    }
    for (int fd : fds) ::close(fd);
    return ports;
}

}  // namespace

RunReport run_live(const BenchOptions& in) {
    BenchOptions opts = in;
    opts.spec.validate();
    auto cfg = sim_config(opts);
    std::vector<std::uint16_t> ports;
    if (opts.base_port != 0) {
        for (std::uint32_t i = 0; i < opts.taas_nodes + opts.storage_nodes; ++i) {
            ports.push_back(static_cast<std::uint16_t>(opts.base_port + i));
        }
    } else {
        ports = free_ports(opts.taas_nodes + opts.storage_nodes);
    }
    std::map<EndpointId, std::string> directory;
    for (std::uint32_t i = 0; i < opts.taas_nodes; ++i) {
        cfg.nodes[i].address = "127.0.0.1:" + std::to_string(ports[i]);
        directory[taas_endpoint(i)] = cfg.nodes[i].address;
    }
    for (std::uint32_t j = 0; j < opts.storage_nodes; ++j) {
        cfg.storage[j].address = "127.0.0.1:" + std::to_string(ports[opts.taas_nodes + j]);
        directory[storage_endpoint(j)] = cfg.storage[j].address;
    }
    auto map = make_shard_map(cfg);

    std::vector<std::shared_ptr<DurableStore>> stores;
    std::vector<std::shared_ptr<KvStorage>> shards;
    std::map<EndpointId, std::unique_ptr<LiveHost>> hosts;
    for (std::uint32_t j = 0; j < opts.storage_nodes; ++j) {
        shards.push_back(make_shard(opts, cfg, j, map));
        auto ep = storage_endpoint(j);
        hosts[ep] = std::make_unique<LiveHost>(ep, directory[ep], directory, [&shards, j] {
            return std::make_unique<StorageNode>(StorageNodeOptions{j, 0, 0}, shards[j]);
        });
    }
    for (std::uint32_t i = 0; i < opts.taas_nodes; ++i) {
        if (opts.data_dir) {
            auto dir = std::filesystem::path(*opts.data_dir) / ("taas" + std::to_string(i));
            stores.push_back(std::shared_ptr<DurableStore>(DurableStore::open(dir, true)));
        } else {
            stores.push_back(std::make_shared<DurableStore>());
        }
        auto ep = taas_endpoint(i);
        auto no = node_options(opts, cfg, i);
        no.validate_cost = 0;
        no.merge_cost = 0;
        hosts[ep] = std::make_unique<LiveHost>(ep, directory[ep], directory, [&stores, no, i] {
            return std::make_unique<TaasNode>(no, stores[i]);
        });
    }
    for (auto& [ep, h] : hosts) h->start();

    std::vector<EndpointId> taas_eps;
    for (std::uint32_t i = 0; i < opts.taas_nodes; ++i) taas_eps.push_back(taas_endpoint(i));
    auto client_opts = [&](std::uint32_t id) {
        ClientOptions co;
        co.client_id = id;
        co.taas_nodes = taas_eps;
        co.default_isolation = opts.spec.isolation;
        co.default_consistency = opts.spec.consistency;
        co.seed = opts.seed * 1000003 + id;
        co.read_timeout = 200'000;
        co.commit_timeout = std::max<Micros>(1'000'000, 50 * opts.epoch_interval);
        return co;
    };
    auto wait_for = [](const std::function<bool()>& pred, Micros timeout) {
        auto deadline = live_now() + timeout;
        while (live_now() < deadline) {
            if (pred()) return true;
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
        return pred();
    };
    auto with_node = [&](std::uint32_t i, const std::function<void(TaasNode*)>& fn) {
        hosts.at(taas_endpoint(i))->inspect([&](Actor* a) { fn(dynamic_cast<TaasNode*>(a)); });
    };
    auto settled = [&](EpochNumber target) {
        std::optional<EpochNumber> applied;
        bool ok = true;
        for (std::uint32_t i = 0; i < opts.taas_nodes && ok; ++i) {
            with_node(i, [&](TaasNode* n) {
                if (n == nullptr) return;
                if (n->phase() != TaasNode::Phase::Running || (applied && *applied != n->applied_next())) {
                    ok = false;
                    return;
                }
                applied = n->applied_next();
            });
        }
        if (!ok || !applied || *applied < target) return false;
        for (auto& s : shards) {
            if (s->applied_next() != *applied) return false;
        }
        return true;
    };
    auto quiesce = [&] {
        EpochNumber target = 0;
        for (std::uint32_t i = 0; i < opts.taas_nodes; ++i) {
            with_node(i, [&](TaasNode* n) {
                if (n) target = std::max(target, n->applied_next() + 1);
            });
        }
        return wait_for([&] { return settled(target); }, 30'000'000);
    };

    bool ok = true;
    if (opts.preload) {
        auto done = std::make_shared<bool>(false);
        auto id = opts.spec.clients;
        auto ep = client_endpoint(id);
        hosts[ep] = std::make_unique<LiveHost>(ep, std::nullopt, directory, [&, id, done] {
            return std::make_unique<LoaderClient>(client_opts(id), opts.spec, done);
        });
        hosts[ep]->start();
        ok = wait_for(
            [&] {
                bool d = false;
                hosts[ep]->inspect([&](Actor*) { d = *done; });
                return d;
            },
            opts.max_duration);
        hosts[ep]->stop();
        hosts.erase(ep);
        ok = ok && quiesce();
    }

    std::vector<std::shared_ptr<ClientStats>> stats;
    auto q = quotas(opts.spec);
    for (std::uint32_t c = 0; c < opts.spec.clients && ok; ++c) {
        auto st = std::make_shared<ClientStats>();
        stats.push_back(st);
        WorkloadClientOptions wo;
        wo.client = client_opts(c);
        wo.spec = opts.spec;
        wo.index = c;
        wo.quota = q[c];
        wo.think_time = opts.think_time;
        auto ep = client_endpoint(c);
        hosts[ep] = std::make_unique<LiveHost>(ep, std::nullopt, directory,
                                               [wo, st] { return std::make_unique<WorkloadClient>(wo, st); });
    }
    const Micros start = live_now();
    for (std::uint32_t c = 0; c < opts.spec.clients && ok; ++c) hosts[client_endpoint(c)]->start();

    std::size_t next_fault = 0;
    auto clients_done = [&] {
        bool all = true;
        for (std::uint32_t c = 0; c < opts.spec.clients; ++c) {
            hosts[client_endpoint(c)]->inspect([&](Actor*) { all = all && stats[c]->done; });
        }
        return all;
    };
    while (ok && !clients_done()) {
        if (live_now() - start > opts.max_duration) {
            ok = false;
            break;
        }
        while (next_fault < opts.faults.events.size() && live_now() - start >= opts.faults.events[next_fault].at) {
            const auto& e = opts.faults.events[next_fault++];
            auto h = hosts.find(e.a);
            if (h == hosts.end()) continue;
            switch (e.kind) {
                case FaultEvent::Kind::Kill:
                    h->second->stop();
                    break;
                case FaultEvent::Kind::Restart:
                    h->second->start();
                    break;
                case FaultEvent::Kind::Wipe:
                    h->second->stop();
                    if (is_taas_endpoint(e.a)) stores.at(e.a)->wipe();
                    break;
                default:
                    throw std::invalid_argument("live runs support kill, restart and wipe only");
            }
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (ok) ok = quiesce();

    auto r = base_report(opts, "live");
    r.finished = ok;
    for (std::uint32_t c = 0; c < stats.size(); ++c) hosts[client_endpoint(c)]->stop();
    fill_client_side(r, stats);
    std::vector<NodeView> views;
    for (std::uint32_t i = 0; i < opts.taas_nodes; ++i) {
        with_node(i, [&](TaasNode* n) { views.push_back(view_of(endpoint_name(taas_endpoint(i)), n, *stores[i])); });
    }
    std::vector<std::map<std::string, VersionedRecord>> recs;
    for (auto& s : shards) recs.push_back(s->records());
    fill_cluster_side(r, views, recs, stats, opts);
    for (auto& [ep, h] : hosts) {
        if (auto ts = h->transport_stats()) {
            r.messages += ts->frames_received;
            if (is_taas_endpoint(ep)) r.peer_messages += ts->frames_sent;
        }
    }
    for (auto& [ep, h] : hosts) h->stop();
    return r;
}

// ------------------------------------------------------------ sweeps

std::vector<SweepRow> scaling_sweep(const BenchOptions& base, std::uint32_t min_nodes, std::uint32_t max_nodes,
                                    const std::vector<std::uint64_t>& seeds) {
    std::vector<SweepRow> rows;
    for (auto seed : seeds) {
        for (auto n = min_nodes; n <= max_nodes; ++n) {
            auto o = base;
            o.taas_nodes = n;
            o.seed = seed;
            o.spec.seed = seed;
            rows.push_back({n, seed, run_sim(o)});
        }
    }
    return rows;
}

nlohmann::json sweep_json(const std::vector<SweepRow>& rows) {
    auto out = nlohmann::json::array();
    for (const auto& row : rows) {
        const auto& r = row.report;
        out.push_back({{"taas_nodes", row.taas_nodes},
                       {"seed", row.seed},
                       {"committed", r.committed},
                       {"aborted", r.aborted},
                       {"committed_per_sec", r.committed_per_sec},
                       {"ops_per_sec", r.ops_per_sec},
                       {"txn_p50_us", r.txn_latency.p50},
                       {"txn_p99_us", r.txn_latency.p99},
                       {"peer_messages", r.peer_messages},
                       {"consistent", r.consistent()}});
    }
    return out;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
    std::ostringstream o;
    o << "taas_nodes seed committed aborted committed_per_sec ops_per_sec txn_p50_us txn_p99_us peer_messages "
         "consistent\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        o << row.taas_nodes << " " << row.seed << " " << r.committed << " " << r.aborted << " "
          << fmt_double(r.committed_per_sec) << " " << fmt_double(r.ops_per_sec) << " " << fmt_double(r.txn_latency.p50)
          << " " << fmt_double(r.txn_latency.p99) << " " << r.peer_messages << " " << (r.consistent() ? "yes" : "no")
          << "\n";
    }
    return o.str();
}

}  // namespace taas
