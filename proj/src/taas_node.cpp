#include "taas/taas_node.hpp"

#include <algorithm>

namespace taas {

void VerdictIndex::add(const EpochLog& log) {
    std::vector<TxnId> ids;
    for (std::size_t i = 0; i < log.committed.size(); ++i) {
        const auto& c = log.committed[i];
        verdicts_[c.txn_id] = TxnVerdict::committed(c.txn_id, Version{log.epoch, static_cast<std::uint32_t>(i)});
        ids.push_back(c.txn_id);
    }
    for (const auto& a : log.aborted) {
        verdicts_[a.txn_id] = TxnVerdict::aborted(a.txn_id, a.reason);
        ids.push_back(a.txn_id);
    }
    by_epoch_.emplace_back(log.epoch, std::move(ids));
    while (!by_epoch_.empty() && by_epoch_.front().first + window_ <= log.epoch) {
        for (const auto& id : by_epoch_.front().second) verdicts_.erase(id);
        by_epoch_.pop_front();
    }
}

const TxnVerdict* VerdictIndex::find(const TxnId& id) const {
    auto it = verdicts_.find(id);
    return it == verdicts_.end() ? nullptr : &it->second;
}

TaasNode::TaasNode(TaasNodeOptions opts, std::shared_ptr<DurableStore> store)
    : opts_(std::move(opts)),
      store_(std::move(store)),
      members_(opts_.cluster.member_ids()),
      clock_(opts_.cluster.epoch_interval),
      recent_(opts_.dedup_window),
      index_(opts_.dedup_window),
      tracker_(opts_.id, members_, opts_.cluster.effective_quorum(), opts_.cluster.effective_retransmit_interval(),
               opts_.cluster.retry_budget) {
    for (auto id : members_) {
        if (id != opts_.id) peers_.push_back(id);
    }
    if (opts_.push_retry == 0) opts_.push_retry = 5 * opts_.cluster.epoch_interval;
    if (opts_.recovery_timeout == 0) opts_.recovery_timeout = 5 * opts_.cluster.epoch_interval;
    if (!store_) store_ = std::make_shared<DurableStore>();
}

EpochNumber TaasNode::push_cursor() const {
    if (push_.empty()) return vt_.next_epoch();
    EpochNumber lo = UINT64_MAX;
    for (const auto& [shard, s] : push_) lo = std::min(lo, s.acked_next);
    return lo;
}

void TaasNode::reply(Runtime& rt, EndpointId to, const TxnVerdict& v) {
    ++counters_.verdicts_sent;
    rt.send(to, encode_message(VerdictMsg{true, v}));
}

// ---------------------------------------------------------------- lifecycle

void TaasNode::load_local() {
    if (const auto& snap = store_->snapshot()) vt_ = VersionTable::decode_snapshot(snap->second);
    for (const auto& log : store_->logs_from(store_->log_begin())) {
        if (log.epoch == vt_.next_epoch()) vt_.apply(log);
        recent_.add(log);
        index_.add(log);
    }
    EpochNumber applied = vt_.next_epoch();
    seal_next_ = std::max(seal_next_, applied);
    for (const auto& [e, b] : store_->own_batches()) {
        if (e < applied) continue;
        assembler_.put_complete(opts_.id, e, b);
        seal_next_ = std::max(seal_next_, e + 1);
    }
    for (const auto& [k, b] : store_->peer_batches()) {
        if (k.first >= applied) assembler_.put_complete(k.second, k.first, b);
    }
}

void TaasNode::on_start(Runtime& rt) {
    bool had_state = !store_->empty();
    load_local();
    for (const auto& s : opts_.cluster.storage) push_[s.shard] = PushState{0, 0, rt.now()};
    if (had_state) ++counters_.recoveries;

    if (!multi()) {
        finish_recovery(rt);
        return;
    }
    phase_ = Phase::Recovering;
    recovery_deadline_ = rt.now() + opts_.recovery_timeout;
    for (auto p : peers_) rt.send(taas_endpoint(p.value), encode_message(SnapshotReq{opts_.id, vt_.next_epoch()}));
    arm(rt);
}

void TaasNode::finish_recovery(Runtime& rt) {
    // Logs from every responder, by epoch; digests agree by construction.
    std::map<EpochNumber, const EpochLog*> logs;
    const SnapshotResp* best_snap = nullptr;
    EpochNumber peer_applied = 0;
    EpochNumber peer_current = 0;
    for (const auto& [id, r] : responses_) {
        for (const auto& l : r.logs) logs.emplace(l.epoch, &l);
        if (r.snapshot && (!best_snap || r.logs.size() > best_snap->logs.size())) best_snap = &r;
        peer_applied = std::max(peer_applied, r.applied_next);
        peer_current = std::max(peer_current, r.current_epoch);
    }

    if (best_snap) {
        auto snap_vt = VersionTable::decode_snapshot(*best_snap->snapshot);
        if (snap_vt.next_epoch() > vt_.next_epoch()) {
            vt_ = std::move(snap_vt);
            recent_ = RecentTxnIndex(opts_.dedup_window);
            index_ = VerdictIndex(opts_.dedup_window);
            EpochNumber begin = best_snap->logs.empty() ? vt_.next_epoch() : best_snap->logs.front().epoch;
            store_->reset_logs(begin);
            store_->put_snapshot(vt_.next_epoch(), *best_snap->snapshot);
            for (const auto& l : best_snap->logs) {
                store_->append_log(l);
                recent_.add(l);
                index_.add(l);
            }
            ++counters_.snapshots_installed;
        }
    }
    for (const auto& [e, l] : logs) {
        if (e != vt_.next_epoch()) continue;
        store_->append_log(*l);
        install_log(*l);
    }
    EpochNumber applied = vt_.next_epoch();
    if (applied > 0) assembler_.drop_through(applied - 1);
    if (applied > 0) store_->drop_peer_batches_through(applied - 1);
    for (auto it = store_->own_batches().begin(); it != store_->own_batches().end();) {
        auto e = (it++)->first;
        if (e < applied) store_->drop_own_batch(e);
    }

    // Own batches peers still hold but this node lost.
    for (const auto& [id, r] : responses_) {
        for (const auto& h : r.held) {
            if (h.epoch < applied || assembler_.complete(opts_.id, h.epoch)) continue;
            store_->put_own_batch(h.epoch, h.batch);
            assembler_.put_complete(opts_.id, h.epoch, h.batch);
        }
    }

    seal_next_ = std::max({seal_next_, applied, peer_applied});
    for (const auto& [e, b] : store_->own_batches()) seal_next_ = std::max(seal_next_, e + 1);
    // Epochs below seal_next_ nobody holds a batch for are resealed empty.
    for (EpochNumber e = applied; e < seal_next_; ++e) {
        if (assembler_.complete(opts_.id, e)) continue;
        store_->put_own_batch(e, NodeBatch{});
        assembler_.put_complete(opts_.id, e, NodeBatch{});
    }

    clock_.resume(seal_next_, rt.now(), std::max(seal_next_, peer_current));
    phase_ = Phase::Running;
    responses_.clear();

    if (multi()) {
        for (const auto& [e, b] : store_->own_batches()) {
            sealed_at_[e] = rt.now();
            tracker_.start(e, rt.now());
            broadcast(rt, e, peers_);
        }
    }

    auto queued = std::move(queued_posts_);
    queued_posts_.clear();
    advance_clock(rt);
    for (auto& [from, post] : queued) handle_post(rt, from, post);
    pump(rt);
}

// ---------------------------------------------------------------- dispatch

void TaasNode::on_message(Runtime& rt, EndpointId from, ByteView message) {
    Message msg;
    try {
        msg = decode_message(message);
    } catch (const DecodeError&) {
        return;
    }
    if (phase_ == Phase::Running) advance_clock(rt);

    std::visit(
        [&](auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, PostTxn>) {
                handle_post(rt, from, m);
            } else if constexpr (std::is_same_v<T, BatchMessage>) {
                handle_batch(rt, m);
            } else if constexpr (std::is_same_v<T, AckMessage>) {
                handle_ack(rt, m);
            } else if constexpr (std::is_same_v<T, SnapshotReq>) {
                handle_snapshot_req(rt, from, m);
            } else if constexpr (std::is_same_v<T, SnapshotResp>) {
                handle_snapshot_resp(rt, std::move(m));
            } else if constexpr (std::is_same_v<T, PushAck>) {
                handle_push_ack(rt, m);
            } else if constexpr (std::is_same_v<T, QueryVerdict>) {
                VerdictMsg resp;
                resp.verdict.txn_id = m.txn_id;
                if (const auto* v = index_.find(m.txn_id)) {
                    resp.verdict = *v;
                } else if (auto it = early_verdicts_.find(m.txn_id); it != early_verdicts_.end()) {
                    resp.verdict = it->second;
                } else {
                    resp.known = false;
                }
                rt.send(from, encode_message(resp));
            } else if constexpr (std::is_same_v<T, GetLatestVersion>) {
                rt.send(from, encode_message(LatestVersionResp{m.request_id, m.key, vt_.latest(m.key)}));
            }
        },
        msg);

    if (phase_ == Phase::Running) pump(rt);
    arm(rt);
}

void TaasNode::on_timer(Runtime& rt) {
    if (phase_ == Phase::Recovering) {
        if (rt.now() >= recovery_deadline_) finish_recovery(rt);
        arm(rt);
        return;
    }
    advance_clock(rt);
    pump(rt);
    arm(rt);
}

void TaasNode::pump(Runtime& rt) {
    for (const auto& d : tracker_.due(rt.now())) {
        if (own_batch(d.epoch) == nullptr) continue;
        ++counters_.retransmits;
        broadcast(rt, d.epoch, d.peers);
    }
    for (auto e : tracker_.take_failed()) fail_epoch(rt, e);
    try_merge(rt);
    check_peer_timeout(rt);
    push(rt);
}

void TaasNode::arm(Runtime& rt) {
    std::optional<Micros> next;
    auto consider = [&](Micros t) {
        if (!next || t < *next) next = t;
    };
    if (phase_ == Phase::Recovering) {
        consider(recovery_deadline_);
    } else {
        consider(clock_.next_boundary());
        if (auto t = tracker_.next_due()) consider(*t);
        EpochNumber e = vt_.next_epoch();
        if (auto it = merge_ready_at_.find(e); it != merge_ready_at_.end() && it->second > rt.now()) {
            consider(it->second);
        }
        if (auto it = sealed_at_.find(e); it != sealed_at_.end() && !timed_out_.contains(e)) {
            consider(it->second + opts_.cluster.effective_peer_timeout());
        }
        for (const auto& [shard, s] : push_) {
            if (s.acked_next < s.sent_next) consider(s.last_progress + opts_.push_retry);
        }
    }
    if (next) rt.wake_at(*next);
}

// ---------------------------------------------------------------- posts

void TaasNode::handle_post(Runtime& rt, EndpointId from, PostTxn& post) {
    const TxnId id = post.payload.txn_id;
    if (phase_ == Phase::Shutdown) {
        reply(rt, from, TxnVerdict::aborted(id, AbortReason::NodeShutdown));
        return;
    }
    if (phase_ == Phase::Recovering) {
        queued_posts_.emplace_back(from, std::move(post));
        return;
    }
    if (const auto* v = index_.find(id)) {
        ++counters_.duplicate_posts;
        reply(rt, from, *v);
        return;
    }
    if (auto it = early_verdicts_.find(id); it != early_verdicts_.end()) {
        ++counters_.duplicate_posts;
        reply(rt, from, it->second);
        return;
    }
    if (auto it = handles_.find(id); it != handles_.end()) {
        ++counters_.duplicate_posts;
        if (std::find(it->second.begin(), it->second.end(), from) == it->second.end()) it->second.push_back(from);
        return;
    }

    ++counters_.posts;
    rt.charge(opts_.validate_cost);
    EpochNumber e = clock_.current();
    TaggedTxn tagged{std::move(post.payload), Timestamp{e, clock_.next_tick(), opts_.id}};
    auto& batch = pending_[e];
    if (auto reason = early_validate(tagged, vt_); reason != AbortReason::None) {
        ++counters_.early_aborts;
        auto v = TxnVerdict::aborted(id, reason);
        early_verdicts_.emplace(id, v);
        batch.early_aborts.push_back(AbortMarker{id, tagged.ts, reason});
        reply(rt, from, v);
        return;
    }
    batch.txns.push_back(std::move(tagged));
    handles_[id].push_back(from);
    local_txns_[e].push_back(id);
}

// ---------------------------------------------------------------- epochs

void TaasNode::advance_clock(Runtime& rt) {
    while (clock_.advance(rt.now())) {
    }
    while (seal_next_ < clock_.current() && (opts_.pipelined || seal_next_ <= vt_.next_epoch())) {
        seal(rt, seal_next_);
    }
}

void TaasNode::seal(Runtime& rt, EpochNumber epoch) {
    NodeBatch b;
    if (auto it = pending_.find(epoch); it != pending_.end()) {
        b = std::move(it->second);
        pending_.erase(it);
    }
    store_->put_own_batch(epoch, b);
    assembler_.put_complete(opts_.id, epoch, std::move(b));
    sealed_at_[epoch] = rt.now();
    seal_next_ = epoch + 1;
    if (multi()) {
        tracker_.start(epoch, rt.now());
        broadcast(rt, epoch, peers_);
    }
}

void TaasNode::broadcast(Runtime& rt, EpochNumber epoch, const std::vector<NodeId>& peers) {
    const auto* b = own_batch(epoch);
    if (b == nullptr) return;
    auto chunks = chunk_batch(opts_.id, epoch, *b, opts_.cluster.chunk_bytes);
    for (const auto& c : chunks) {
        Bytes bytes = encode_message(c);
        for (auto p : peers) {
            if (p != opts_.id) rt.send(taas_endpoint(p.value), bytes);
        }
    }
}

// The assembler forgets an epoch once it is merged here; peers that lag
// still need it, so fall back to the copy kept until everyone acked.
const NodeBatch* TaasNode::own_batch(EpochNumber epoch) const {
    if (const auto* b = assembler_.batch(opts_.id, epoch)) return b;
    auto it = store_->own_batches().find(epoch);
    return it == store_->own_batches().end() ? nullptr : &it->second;
}

void TaasNode::handle_batch(Runtime& rt, const BatchMessage& msg) {
    if (msg.from == opts_.id) return;
    if (!std::binary_search(members_.begin(), members_.end(), msg.from)) return;
    auto ack = [&] { rt.send(taas_endpoint(msg.from.value), encode_message(AckMessage{opts_.id, msg.from, msg.epoch})); };
    if (msg.epoch < vt_.next_epoch()) {
        // Already merged here; the sender is retransmitting or recovering.
        ack();
        return;
    }
    switch (assembler_.offer(msg)) {
        case BatchAssembler::Offer::Completed:
            store_->put_peer_batch(msg.from, msg.epoch, *assembler_.batch(msg.from, msg.epoch));
            ack();
            break;
        case BatchAssembler::Offer::AlreadyComplete:
        case BatchAssembler::Offer::Duplicate:
            if (assembler_.complete(msg.from, msg.epoch)) ack();
            break;
        case BatchAssembler::Offer::Buffered:
        case BatchAssembler::Offer::Rejected:
            break;
    }
}

void TaasNode::handle_ack(Runtime& rt, const AckMessage& msg) {
    if (msg.acking_node != opts_.id) return;
    auto outcome = tracker_.on_ack(msg.from, msg.acking_epoch);
    if (outcome && outcome->kind == QuorumOutcome::Kind::Achieved && merged_awaiting_quorum_.erase(msg.acking_epoch)) {
        emit_verdicts(rt, msg.acking_epoch);
    }
    maybe_release_own(msg.acking_epoch);
}

void TaasNode::fail_epoch(Runtime& rt, EpochNumber epoch) {
    ++counters_.quorum_failures;
    merged_awaiting_quorum_.erase(epoch);
    auto it = local_txns_.find(epoch);
    if (it == local_txns_.end()) return;
    for (const auto& id : it->second) {
        auto h = handles_.find(id);
        if (h == handles_.end()) continue;
        for (auto to : h->second) reply(rt, to, TxnVerdict::aborted(id, AbortReason::NodeShutdown));
        handles_.erase(h);
    }
    local_txns_.erase(it);
}

void TaasNode::maybe_release_own(EpochNumber epoch) {
    if (epoch >= vt_.next_epoch()) return;
    if (multi() && !tracker_.fully_acked(epoch)) return;
    if (merged_awaiting_quorum_.contains(epoch)) return;
    store_->drop_own_batch(epoch);
    tracker_.forget(epoch);
}

void TaasNode::try_merge(Runtime& rt) {
    while (phase_ == Phase::Running) {
        EpochNumber e = vt_.next_epoch();
        if (e >= seal_next_) break;
        auto input = assembler_.collect(e, members_);
        if (!input) break;
        if (opts_.merge_delay) {
            auto [it, inserted] = merge_ready_at_.try_emplace(e, rt.now() + opts_.merge_delay(e));
            if (rt.now() < it->second) break;
        }
        merge(rt, *input);
        // Sync mode may have deferred sealing behind this merge.
        advance_clock(rt);
    }
}

void TaasNode::install_log(const EpochLog& log) {
    vt_.apply(log);
    recent_.add(log);
    index_.add(log);
    for (const auto& a : log.aborted) early_verdicts_.erase(a.txn_id);
}

void TaasNode::merge(Runtime& rt, const MergeInput& input) {
    const EpochNumber e = input.epoch;
    std::size_t n = 0;
    for (const auto& [node, b] : input.per_node_batches) n += b.txns.size() + b.early_aborts.size();
    rt.charge(opts_.merge_cost * static_cast<Micros>(n));

    EpochLog log = resolve_epoch(input, members_, vt_, recent_);
    store_->append_log(log);  // persisted before any verdict leaves
    install_log(log);
    assembler_.drop_through(e);
    store_->drop_peer_batches_through(e);
    merge_ready_at_.erase(e);
    timed_out_.erase(e);

    EpochStat stat;
    stat.epoch = e;
    stat.committed = static_cast<std::uint32_t>(log.committed.size());
    stat.aborted = static_cast<std::uint32_t>(log.aborted.size());
    if (auto it = sealed_at_.find(e); it != sealed_at_.end()) {
        stat.sealed_at = it->second;
        sealed_at_.erase(it);
    }
    stat.merged_at = rt.now();
    epoch_stats_.push_back(stat);

    if (opts_.snapshot_every > 0 && vt_.next_epoch() % opts_.snapshot_every == 0) {
        store_->put_snapshot(vt_.next_epoch(), vt_.encode_snapshot());
    }

    auto outcome = tracker_.outcome(e).kind;
    if (opts_.ack_mode == AckMode::Merged || !multi() || outcome == QuorumOutcome::Kind::Achieved) {
        emit_verdicts(rt, e);
    } else if (outcome == QuorumOutcome::Kind::Pending && tracker_.tracking(e)) {
        merged_awaiting_quorum_.insert(e);
    } else {
        local_txns_.erase(e);
    }
    maybe_release_own(e);
}

void TaasNode::emit_verdicts(Runtime& rt, EpochNumber epoch) {
    auto it = local_txns_.find(epoch);
    if (it == local_txns_.end()) return;
    for (const auto& id : it->second) {
        auto h = handles_.find(id);
        if (h == handles_.end()) continue;
        if (const auto* v = index_.find(id)) {
            for (auto to : h->second) reply(rt, to, *v);
        }
        handles_.erase(h);
    }
    local_txns_.erase(it);
}

void TaasNode::check_peer_timeout(Runtime& rt) {
    EpochNumber e = vt_.next_epoch();
    auto it = sealed_at_.find(e);
    if (it == sealed_at_.end() || timed_out_.contains(e)) return;
    if (rt.now() - it->second < opts_.cluster.effective_peer_timeout()) return;
    timed_out_.insert(e);
    counters_.peer_timeouts += assembler_.missing(e, members_).size();
}

// ---------------------------------------------------------------- storage push

void TaasNode::push(Runtime& rt) {
    const EpochNumber end = vt_.next_epoch();
    for (auto& [shard, s] : push_) {
        if (s.acked_next < s.sent_next && rt.now() - s.last_progress >= opts_.push_retry) {
            s.sent_next = s.acked_next;
            s.last_progress = rt.now();
        }
        if (s.sent_next < store_->log_begin()) s.sent_next = store_->log_begin();
        while (s.sent_next < end && s.sent_next < s.acked_next + opts_.push_window) {
            const EpochLog* log = store_->log(s.sent_next);
            if (log == nullptr) break;
            if (s.acked_next == s.sent_next) s.last_progress = rt.now();
            rt.send(storage_endpoint(shard), encode_message(PushLog{*log}));
            ++s.sent_next;
        }
    }
}

void TaasNode::handle_push_ack(Runtime& rt, const PushAck& ack) {
    auto it = push_.find(ack.shard);
    if (it == push_.end()) return;
    auto& s = it->second;
    if (ack.applied_next > s.acked_next) {
        s.acked_next = ack.applied_next;
        s.last_progress = rt.now();
        s.sent_next = std::max(s.sent_next, s.acked_next);
    } else if (ack.applied_next < s.acked_next) {
        // The shard lost state; start over from where it is.
        s.acked_next = s.sent_next = ack.applied_next;
        s.last_progress = rt.now();
    }
}

// ---------------------------------------------------------------- recovery

void TaasNode::handle_snapshot_req(Runtime& rt, EndpointId from, const SnapshotReq& req) {
    SnapshotResp resp;
    resp.responder = opts_.id;
    resp.current_epoch = phase_ == Phase::Recovering ? seal_next_ : clock_.current();
    resp.applied_next = vt_.next_epoch();

    EpochNumber from_epoch = req.from_epoch;
    const auto& snap = store_->snapshot();
    bool lacks_logs = from_epoch < store_->log_begin();
    bool fresh_and_long = from_epoch == 0 && snap && snap->first > opts_.dedup_window;
    if (snap && (lacks_logs || fresh_and_long)) {
        resp.snapshot = snap->second;
        // Enough history before the snapshot to rebuild the dedup window.
        EpochNumber lo = snap->first > opts_.dedup_window ? snap->first - opts_.dedup_window : 0;
        from_epoch = std::max(lo, store_->log_begin());
    }
    resp.logs = store_->logs_from(from_epoch);
    for (const auto& [k, b] : store_->peer_batches()) {
        if (k.second == req.requester) resp.held.push_back({k.first, b});
    }
    rt.send(from, encode_message(resp));
    // The requester may have lost batches it had not merged yet.
    for (const auto& [e, b] : store_->own_batches()) {
        if (e >= req.from_epoch) broadcast(rt, e, {req.requester});
    }
}

void TaasNode::handle_snapshot_resp(Runtime& rt, SnapshotResp resp) {
    if (phase_ != Phase::Recovering) return;
    if (!std::binary_search(peers_.begin(), peers_.end(), resp.responder)) return;
    responses_[resp.responder] = std::move(resp);
    if (responses_.size() == peers_.size()) finish_recovery(rt);
}

}  // namespace taas
