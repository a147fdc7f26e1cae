#include "taas/occ_engine.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace taas {

EpochGap::EpochGap(EpochNumber expected_epoch, EpochNumber got_epoch)
    : std::runtime_error("epoch gap: expected " + std::to_string(expected_epoch) + ", got " +
                         std::to_string(got_epoch)),
      expected(expected_epoch),
      got(got_epoch) {}

IncompleteInput::IncompleteInput(NodeId missing_node)
    : std::runtime_error("merge input missing batch from node " + std::to_string(missing_node.value)),
      missing(missing_node) {}

ObservedVersion VersionTable::latest(std::string_view key) const {
    auto it = latest_.find(key);
    if (it == latest_.end()) return kUnread;
    return it->second.version;
}

const KeyVersion* VersionTable::find(std::string_view key) const {
    auto it = latest_.find(key);
    return it == latest_.end() ? nullptr : &it->second;
}

void VersionTable::apply(const EpochLog& log) {
    if (log.epoch != next_epoch_) throw EpochGap(next_epoch_, log.epoch);
    for (std::size_t i = 0; i < log.committed.size(); ++i) {
        const auto& c = log.committed[i];
        Version v{log.epoch, static_cast<std::uint32_t>(i)};
        for (const auto& w : c.writes) latest_[w.key] = KeyVersion{v, c.ts};
    }
    ++next_epoch_;
}

Digest VersionTable::digest() const { return Sha256::of(encode_snapshot()); }

Bytes VersionTable::encode_snapshot() const {
    std::vector<const std::pair<const std::string, KeyVersion>*> sorted;
    sorted.reserve(latest_.size());
    for (const auto& kv : latest_) sorted.push_back(&kv);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->first < b->first; });

    ByteWriter w;
    w.u64(next_epoch_);
    w.u32(static_cast<std::uint32_t>(sorted.size()));
    for (const auto* kv : sorted) {
        w.str(kv->first);
        put(w, kv->second.version);
        put(w, kv->second.ts);
    }
    return w.take();
}

VersionTable VersionTable::decode_snapshot(ByteView bytes) {
    ByteReader r(bytes);
    VersionTable vt;
    vt.next_epoch_ = r.u64();
    auto n = r.count(32);
    vt.latest_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto key = r.str();
        KeyVersion kv;
        get(r, kv.version);
        get(r, kv.ts);
        vt.latest_.emplace(std::move(key), kv);
    }
    r.expect_done();
    return vt;
}

VersionTable apply_epoch_to_version_table(VersionTable vt, const EpochLog& log) {
    vt.apply(log);
    return vt;
}

AbortReason validate_read_consistency(const TaggedTxn& txn, const VersionTable& vt) {
    if (txn.payload.consistency == ConsistencyMode::StaleOk) return AbortReason::None;
    for (const auto& r : txn.payload.reads) {
        if (r.observed < vt.latest(r.key)) return AbortReason::StaleRead;
    }
    return AbortReason::None;
}

AbortReason validate_readset(const TaggedTxn& txn, const VersionTable& vt, IsolationLevel level) {
    if (level == IsolationLevel::ReadCommitted) return AbortReason::None;
    for (const auto& r : txn.payload.reads) {
        if (r.observed != vt.latest(r.key)) return AbortReason::ReadValidationFailed;
    }
    return AbortReason::None;
}

AbortReason validate(const TaggedTxn& txn, const VersionTable& vt) {
    if (auto r = validate_read_consistency(txn, vt); r != AbortReason::None) return r;
    return validate_readset(txn, vt, txn.payload.isolation);
}

AbortReason early_validate(const TaggedTxn& txn, const VersionTable& vt) {
    bool stale = std::any_of(txn.payload.reads.begin(), txn.payload.reads.end(),
                             [&](const ReadEntry& r) { return r.observed < vt.latest(r.key); });
    if (!stale) return AbortReason::None;
    if (txn.payload.consistency == ConsistencyMode::Strong) return AbortReason::StaleRead;
    if (txn.payload.isolation != IsolationLevel::ReadCommitted) return AbortReason::ReadValidationFailed;
    return AbortReason::None;
}

void check_complete(const MergeInput& input, std::span<const NodeId> members) {
    for (auto id : members) {
        if (!input.per_node_batches.contains(id)) throw IncompleteInput(id);
    }
}

namespace {

struct MergeItem {
    Timestamp ts;
    TxnId id;
    const TaggedTxn* txn = nullptr;  // null for early abort markers
    AbortReason marker_reason = AbortReason::None;
};

std::vector<MergeItem> flatten(const MergeInput& input) {
    std::vector<MergeItem> items;
    for (const auto& [node, batch] : input.per_node_batches) {
        for (const auto& t : batch.txns) items.push_back({t.ts, t.payload.txn_id, &t, AbortReason::None});
        for (const auto& m : batch.early_aborts) items.push_back({m.ts, m.txn_id, nullptr, m.reason});
    }
    std::sort(items.begin(), items.end(), [](const MergeItem& a, const MergeItem& b) {
        if (a.ts != b.ts) return a.ts < b.ts;
        return a.id < b.id;
    });
    return items;
}

EpochLog merge_items(const MergeInput& input, const VersionTable* vt, const RecentTxnIndex* recent, bool ssi) {
    EpochLog log;
    log.epoch = input.epoch;

    std::set<TxnId> seen;
    std::unordered_set<std::string_view> claimed;
    std::vector<const TaggedTxn*> tentative;

    for (const auto& item : flatten(input)) {
        if (recent && recent->contains(item.id)) continue;
        if (!seen.insert(item.id).second) continue;

        if (item.txn == nullptr) {
            log.aborted.push_back({item.id, item.marker_reason});
            continue;
        }
        if (vt) {
            if (auto reason = validate(*item.txn, *vt); reason != AbortReason::None) {
                log.aborted.push_back({item.id, reason});
                continue;
            }
        }
        const auto& writes = item.txn->payload.writes;
        bool lost = std::any_of(writes.begin(), writes.end(),
                                [&](const WriteEntry& w) { return claimed.contains(w.key); });
        if (lost) {
            log.aborted.push_back({item.id, AbortReason::WriteConflictLost});
            continue;
        }
        for (const auto& w : writes) claimed.insert(w.key);
        tentative.push_back(item.txn);
    }

    std::set<TxnId> ssi_aborts;
    if (ssi) {
        std::vector<TxnFootprint> footprints;
        std::vector<TxnId> candidates;
        for (const auto* t : tentative) {
            if (t->payload.isolation != IsolationLevel::SerializableSnapshotIsolation) continue;
            TxnFootprint fp{t->payload.txn_id, t->ts, {}, {}};
            for (const auto& r : t->payload.reads) fp.reads.push_back(r.key);
            for (const auto& w : t->payload.writes) fp.writes.push_back(w.key);
            footprints.push_back(std::move(fp));
            candidates.push_back(t->payload.txn_id);
        }
        if (footprints.size() > 1) {
            ssi_aborts = analyze_ssi(DependencyGraph::build(footprints), candidates);
        }
    }

    for (const auto* t : tentative) {
        if (ssi_aborts.contains(t->payload.txn_id)) {
            log.aborted.push_back({t->payload.txn_id, AbortReason::SsiDangerousStructure});
        } else {
            log.committed.push_back({t->payload.txn_id, t->ts, t->payload.writes});
        }
    }
    seal(log);
    return log;
}

}  // namespace

EpochLog merge_epoch(const MergeInput& input, std::span<const NodeId> members) {
    check_complete(input, members);
    return merge_items(input, nullptr, nullptr, false);
}

void RecentTxnIndex::add(const EpochLog& log) {
    std::vector<TxnId> ids;
    ids.reserve(log.committed.size() + log.aborted.size());
    for (const auto& c : log.committed) ids.push_back(c.txn_id);
    for (const auto& a : log.aborted) ids.push_back(a.txn_id);
    for (const auto& id : ids) ids_.insert(id);
    by_epoch_.emplace_back(log.epoch, std::move(ids));
    while (!by_epoch_.empty() && by_epoch_.front().first + window_ <= log.epoch) {
        for (const auto& id : by_epoch_.front().second) ids_.erase(id);
        by_epoch_.pop_front();
    }
}

EpochLog resolve_epoch(const MergeInput& input, std::span<const NodeId> members, const VersionTable& vt,
                       const RecentTxnIndex& recent) {
    check_complete(input, members);
    if (vt.next_epoch() != input.epoch) throw EpochGap(vt.next_epoch(), input.epoch);
    return merge_items(input, &vt, &recent, true);
}

DependencyGraph DependencyGraph::build(std::span<const TxnFootprint> txns) {
    DependencyGraph g;
    g.nodes_.assign(txns.begin(), txns.end());

    std::unordered_map<std::string_view, std::vector<std::size_t>> writers;
    for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
        for (const auto& k : g.nodes_[i].writes) writers[k].push_back(i);
    }
    std::set<std::tuple<std::size_t, std::size_t, EdgeKind>> dedup;
    auto add = [&](std::size_t from, std::size_t to, EdgeKind kind) {
        if (dedup.emplace(from, to, kind).second) g.edges_.push_back({from, to, kind});
    };
    for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
        for (const auto& k : g.nodes_[i].reads) {
            auto it = writers.find(k);
            if (it == writers.end()) continue;
            for (auto j : it->second) {
                if (j != i) add(i, j, EdgeKind::ReadWrite);
            }
        }
    }
    for (const auto& [key, ws] : writers) {
        for (auto a : ws) {
            for (auto b : ws) {
                if (a != b && g.nodes_[a].ts < g.nodes_[b].ts) add(a, b, EdgeKind::WriteWrite);
            }
        }
    }
    // Deterministic edge order regardless of hash iteration.
    std::sort(g.edges_.begin(), g.edges_.end(), [](const Edge& x, const Edge& y) {
        return std::tie(x.from, x.to, x.kind) < std::tie(y.from, y.to, y.kind);
    });
    return g;
}

std::size_t DependencyGraph::rw_edge_count() const {
    return static_cast<std::size_t>(
        std::count_if(edges_.begin(), edges_.end(), [](const Edge& e) { return e.kind == EdgeKind::ReadWrite; }));
}

std::set<TxnId> analyze_ssi(const DependencyGraph& graph, std::span<const TxnId> candidate_commits) {
    const auto& nodes = graph.nodes();
    std::vector<bool> alive(nodes.size(), false);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        alive[i] = std::find(candidate_commits.begin(), candidate_commits.end(), nodes[i].id) !=
                   candidate_commits.end();
    }

    std::set<TxnId> aborts;
    while (true) {
        std::vector<bool> has_in(nodes.size(), false);
        std::vector<bool> has_out(nodes.size(), false);
        for (const auto& e : graph.edges()) {
            if (e.kind != EdgeKind::ReadWrite || !alive[e.from] || !alive[e.to]) continue;
            has_out[e.from] = true;
            has_in[e.to] = true;
        }
        std::optional<std::size_t> pivot;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!alive[i] || !has_in[i] || !has_out[i]) continue;
            if (!pivot || nodes[*pivot].ts < nodes[i].ts) pivot = i;
        }
        if (!pivot) break;
        alive[*pivot] = false;
        aborts.insert(nodes[*pivot].id);
    }
    return aborts;
}

}  // namespace taas
