#include "taas/exec_client.hpp"

#include <algorithm>

namespace taas {

TxnSession::TxnSession(TxnId id, IsolationLevel isolation, ConsistencyMode consistency)
    : id_(id), isolation_(isolation), consistency_(consistency) {}

void TxnSession::require_active() const {
    if (state_ != State::Active) throw SessionClosed();
}

std::optional<std::optional<std::string>> TxnSession::local_read(const std::string& key) const {
    if (auto it = writes_.find(key); it != writes_.end()) return it->second;
    if (auto it = reads_.find(key); it != reads_.end() && it->second.value_known) return it->second.value;
    return std::nullopt;
}

std::optional<std::string> TxnSession::record_read(const std::string& key, const std::optional<VersionedRecord>& rec) {
    require_active();
    auto [it, inserted] = reads_.try_emplace(key);
    if (inserted || !it->second.value_known) {
        // Keep the first observation so the readset matches what was used.
        if (inserted) it->second.observed = rec ? ObservedVersion(rec->version) : kUnread;
        it->second.value = rec ? rec->value : std::nullopt;
        it->second.value_known = true;
    }
    if (auto w = writes_.find(key); w != writes_.end()) return w->second;
    return it->second.value;
}

void TxnSession::record_version(const std::string& key, const std::optional<VersionedRecord>& rec) {
    require_active();
    auto [it, inserted] = reads_.try_emplace(key);
    if (!inserted) return;
    it->second.observed = rec ? ObservedVersion(rec->version) : kUnread;
    it->second.value_known = false;
}

void TxnSession::write(const std::string& key, std::string value) {
    require_active();
    writes_[key] = std::move(value);
}

void TxnSession::erase(const std::string& key) {
    require_active();
    writes_[key] = std::nullopt;
}

std::vector<std::string> TxnSession::keys_needing_version() const {
    std::vector<std::string> out;
    if (isolation_ != IsolationLevel::SnapshotIsolation && isolation_ != IsolationLevel::SerializableSnapshotIsolation) {
        return out;
    }
    for (const auto& [k, v] : writes_) {
        if (!reads_.contains(k)) out.push_back(k);
    }
    return out;
}

TxnPayload TxnSession::payload() const {
    TxnPayload p;
    p.txn_id = id_;
    p.isolation = isolation_;
    p.consistency = consistency_;
    for (const auto& [k, r] : reads_) p.reads.push_back({k, r.observed});
    for (const auto& [k, v] : writes_) p.writes.push_back({k, v});
    return p;
}

void TxnSession::mark_posted() {
    require_active();
    state_ = State::Posted;
}

void TxnSession::decide(const TxnVerdict& v) {
    state_ = State::Decided;
    verdict_ = v;
}

CompositeTxn::CompositeTxn(TxnId id, IsolationLevel isolation, ConsistencyMode consistency)
    : id_(id), isolation_(isolation), consistency_(consistency) {}

TxnSession& CompositeTxn::sub(const std::string& label) {
    for (auto& [l, s] : subs_) {
        if (l == label) return *s;
    }
    subs_.emplace_back(label, std::make_unique<TxnSession>(id_, isolation_, consistency_));
    return *subs_.back().second;
}

std::vector<std::string> CompositeTxn::labels() const {
    std::vector<std::string> out;
    for (const auto& [l, s] : subs_) out.push_back(l);
    return out;
}

TxnPayload CompositeTxn::payload() const {
    std::map<std::string, ObservedVersion> reads;
    std::map<std::string, std::optional<std::string>> writes;
    for (const auto& [label, s] : subs_) {
        auto p = s->payload();
        for (auto& r : p.reads) reads.try_emplace(r.key, r.observed);
        for (auto& w : p.writes) writes[w.key] = std::move(w.value);
    }
    TxnPayload out;
    out.txn_id = id_;
    out.isolation = isolation_;
    out.consistency = consistency_;
    for (auto& [k, v] : reads) out.reads.push_back({k, v});
    for (auto& [k, v] : writes) out.writes.push_back({k, std::move(v)});
    out.sub_txn_labels = labels();
    return out;
}

EndpointId RandomRouter::pick(const TxnPayload&, std::span<const EndpointId> nodes, std::optional<EndpointId> avoid,
                              std::mt19937_64& rng) {
    if (nodes.empty()) throw std::logic_error("no taas nodes configured");
    if (nodes.size() == 1 || !avoid) {
        return nodes[std::uniform_int_distribution<std::size_t>(0, nodes.size() - 1)(rng)];
    }
    std::vector<EndpointId> others;
    for (auto n : nodes) {
        if (n != *avoid) others.push_back(n);
    }
    if (others.empty()) return nodes.front();
    return others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
}

ClientCore::ClientCore(ClientOptions opts, std::unique_ptr<Router> router)
    : opts_(std::move(opts)), router_(std::move(router)), rng_(opts_.seed) {}

void ClientCore::start(Runtime& rt) {
    map_rid_ = next_rid_++;
    map_deadline_ = rt.now() + opts_.read_timeout;
    rt.send(opts_.meta_endpoint, encode_message(GetMeta{map_rid_, "shards"}));
}

TxnId ClientCore::next_txn_id() { return TxnId{opts_.client_id, ++next_seq_}; }

std::shared_ptr<TxnSession> ClientCore::begin(std::optional<IsolationLevel> isolation,
                                              std::optional<ConsistencyMode> consistency) {
    return std::make_shared<TxnSession>(next_txn_id(), isolation.value_or(opts_.default_isolation),
                                        consistency.value_or(opts_.default_consistency));
}

std::unique_ptr<CompositeTxn> ClientCore::begin_composite(std::optional<IsolationLevel> isolation,
                                                          std::optional<ConsistencyMode> consistency) {
    return std::make_unique<CompositeTxn>(next_txn_id(), isolation.value_or(opts_.default_isolation),
                                          consistency.value_or(opts_.default_consistency));
}

void ClientCore::fetch(Runtime& rt, const std::string& key, FetchDone done) {
    if (!shards_) {
        waiting_for_map_.push_back([this, key, done = std::move(done)](Runtime& now_rt) mutable {
            fetch(now_rt, key, std::move(done));
        });
        return;
    }
    const auto* entry = shards_->lookup(key);
    if (entry == nullptr) {
        done(rt, false, std::nullopt);
        return;
    }
    ++counters_.storage_reads;
    auto rid = next_rid_++;
    auto& r = reads_[rid];
    r.key = key;
    r.shard = entry->endpoint;
    r.done = std::move(done);
    send_read(rt, rid, r);
}

void ClientCore::send_read(Runtime& rt, std::uint64_t rid, PendingRead& r) {
    ++r.attempts;
    r.deadline = rt.now() + opts_.read_timeout;
    rt.send(r.shard, encode_message(GetData{rid, r.key}));
}

void ClientCore::read(Runtime& rt, const std::shared_ptr<TxnSession>& s, const std::string& key, ReadCallback cb) {
    if (auto local = s->local_read(key)) {
        ++counters_.buffered_reads;
        cb(rt, ReadResult{true, *local});
        return;
    }
    fetch(rt, key, [s, key, cb = std::move(cb)](Runtime& r, bool ok, const std::optional<VersionedRecord>& rec) {
        if (!ok) {
            cb(r, ReadResult{false, std::nullopt});
            return;
        }
        cb(r, ReadResult{true, s->record_read(key, rec)});
    });
}

void ClientCore::read(Runtime& rt, TxnSession& s, const std::string& key, ReadCallback cb) {
    if (auto local = s.local_read(key)) {
        ++counters_.buffered_reads;
        cb(rt, ReadResult{true, *local});
        return;
    }
    fetch(rt, key, [&s, key, cb = std::move(cb)](Runtime& r, bool ok, const std::optional<VersionedRecord>& rec) {
        if (!ok) {
            cb(r, ReadResult{false, std::nullopt});
            return;
        }
        cb(r, ReadResult{true, s.record_read(key, rec)});
    });
}

void ClientCore::commit(Runtime& rt, const std::shared_ptr<TxnSession>& s, VerdictCallback cb) {
    auto keys = s->keys_needing_version();
    auto finish = [this, s, cb = std::move(cb)](Runtime& r) mutable {
        s->mark_posted();
        post(r, s->payload(), [s, cb = std::move(cb)](Runtime& r2, const TxnVerdict& v) {
            s->decide(v);
            cb(r2, v);
        });
    };
    if (keys.empty()) {
        finish(rt);
        return;
    }
    auto remaining = std::make_shared<std::size_t>(keys.size());
    auto shared_finish = std::make_shared<decltype(finish)>(std::move(finish));
    for (const auto& k : keys) {
        fetch(rt, k, [s, k, remaining, shared_finish](Runtime& r, bool, const std::optional<VersionedRecord>& rec) {
            // A failed version fetch records the key as unread; validation
            // then decides.
            s->record_version(k, rec);
            if (--*remaining == 0) (*shared_finish)(r);
        });
    }
}

void ClientCore::commit_composite(Runtime& rt, std::unique_ptr<CompositeTxn> c, VerdictCallback cb) {
    // Blind writes under SI/SSI get their pre-write versions first.
    std::vector<std::pair<TxnSession*, std::string>> need;
    for (const auto& label : c->labels()) {
        auto& sub = c->sub(label);
        for (auto& k : sub.keys_needing_version()) need.emplace_back(&sub, std::move(k));
    }
    auto holder = std::shared_ptr<CompositeTxn>(std::move(c));
    auto finish = [this, holder, cb = std::move(cb)](Runtime& r) mutable {
        auto payload = holder->payload();
        for (const auto& label : holder->labels()) holder->sub(label).mark_posted();
        post(r, std::move(payload), [holder, cb = std::move(cb)](Runtime& r2, const TxnVerdict& v) {
            for (const auto& label : holder->labels()) holder->sub(label).decide(v);
            cb(r2, v);
        });
    };
    if (need.empty()) {
        finish(rt);
        return;
    }
    auto remaining = std::make_shared<std::size_t>(need.size());
    auto shared_finish = std::make_shared<decltype(finish)>(std::move(finish));
    for (auto& [sub, k] : need) {
        fetch(rt, k, [sub = sub, k = k, remaining, shared_finish, holder](Runtime& r, bool,
                                                                          const std::optional<VersionedRecord>& rec) {
            sub->record_version(k, rec);
            if (--*remaining == 0) (*shared_finish)(r);
        });
    }
}

void ClientCore::post(Runtime& rt, TxnPayload payload, VerdictCallback cb) {
    TxnId id = payload.txn_id;
    if (commits_.contains(id)) throw std::logic_error("txn " + to_string(id) + " already posted");
    auto& c = commits_[id];
    c.payload = std::move(payload);
    c.cb = std::move(cb);
    ++counters_.posts;
    send_post(rt, c, std::nullopt);
}

void ClientCore::send_post(Runtime& rt, PendingCommit& c, std::optional<EndpointId> avoid) {
    c.node = router_->pick(c.payload, opts_.taas_nodes, avoid, rng_);
    c.deadline = rt.now() + opts_.commit_timeout;
    rt.send(c.node, encode_message(PostTxn{c.payload, c.attempts}));
    ++c.attempts;
}

void ClientCore::get_meta(Runtime& rt, const std::string& name, MetaCallback cb) {
    auto rid = next_rid_++;
    metas_[rid] = PendingMeta{name, std::move(cb)};
    rt.send(opts_.meta_endpoint, encode_message(GetMeta{rid, name}));
}

void ClientCore::handle_verdict(Runtime& rt, EndpointId from, const VerdictMsg& v) {
    auto it = commits_.find(v.verdict.txn_id);
    if (it == commits_.end()) {
        ++counters_.duplicate_verdicts;
        return;
    }
    auto& c = it->second;
    if (!v.known) {
        // The queried node has no decision yet; hand the payload to it so
        // it either reports the logged verdict or tags the post afresh.
        ++counters_.reposts;
        c.deadline = rt.now() + opts_.commit_timeout;
        c.node = from;
        rt.send(from, encode_message(PostTxn{c.payload, c.attempts++}));
        return;
    }
    if (v.verdict.reason == AbortReason::NodeShutdown) {
        // Ambiguous: the batch may still be merged. Ask another node.
        ++counters_.queries;
        c.node = router_->pick(c.payload, opts_.taas_nodes, from, rng_);
        c.deadline = rt.now() + opts_.commit_timeout;
        rt.send(c.node, encode_message(QueryVerdict{c.payload.txn_id}));
        return;
    }
    auto cb = std::move(c.cb);
    auto verdict = v.verdict;
    commits_.erase(it);
    cb(rt, verdict);
}

bool ClientCore::on_message(Runtime& rt, EndpointId from, ByteView message) {
    Message msg;
    try {
        msg = decode_message(message);
    } catch (const DecodeError&) {
        return false;
    }
    if (auto* d = std::get_if<DataResp>(&msg)) {
        auto it = reads_.find(d->request_id);
        if (it == reads_.end()) return true;
        auto done = std::move(it->second.done);
        reads_.erase(it);
        std::optional<VersionedRecord> rec;
        if (d->found) rec = std::move(d->record);
        done(rt, true, rec);
        return true;
    }
    if (auto* v = std::get_if<VerdictMsg>(&msg)) {
        handle_verdict(rt, from, *v);
        return true;
    }
    if (auto* m = std::get_if<MetaResp>(&msg)) {
        if (m->request_id == map_rid_ && !shards_) {
            if (!m->found) return true;
            try {
                shards_ = ShardMap::decode(m->blob);
            } catch (const DecodeError&) {
                return true;
            }
            auto waiting = std::move(waiting_for_map_);
            waiting_for_map_.clear();
            for (auto& w : waiting) w(rt);
            return true;
        }
        auto it = metas_.find(m->request_id);
        if (it == metas_.end()) return true;
        auto cb = std::move(it->second.cb);
        metas_.erase(it);
        cb(rt, m->found ? std::optional<Bytes>(std::move(m->blob)) : std::nullopt);
        return true;
    }
    return false;
}

void ClientCore::on_timer(Runtime& rt) {
    Micros now = rt.now();
    if (!shards_ && now >= map_deadline_) start(rt);

    std::vector<std::uint64_t> failed;
    for (auto& [rid, r] : reads_) {
        if (now < r.deadline) continue;
        if (r.attempts >= opts_.max_read_attempts) {
            failed.push_back(rid);
            continue;
        }
        ++counters_.read_retries;
        send_read(rt, rid, r);
    }
    for (auto rid : failed) {
        auto done = std::move(reads_.at(rid).done);
        reads_.erase(rid);
        done(rt, false, std::nullopt);
    }

    for (auto& [id, c] : commits_) {
        if (now < c.deadline) continue;
        ++counters_.reposts;
        send_post(rt, c, c.node);
    }
}

std::optional<Micros> ClientCore::next_deadline() const {
    std::optional<Micros> best;
    auto consider = [&](Micros t) {
        if (!best || t < *best) best = t;
    };
    if (!shards_) consider(map_deadline_);
    for (const auto& [rid, r] : reads_) consider(r.deadline);
    for (const auto& [id, c] : commits_) consider(c.deadline);
    return best;
}

}  // namespace taas
