#include "taas/epoch_exchange.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace taas {

std::uint32_t ClusterConfig::effective_quorum() const {
    if (quorum != 0) return quorum;
    return static_cast<std::uint32_t>(nodes.size() / 2 + 1);
}

Micros ClusterConfig::effective_peer_timeout() const {
    return peer_timeout != 0 ? peer_timeout : 10 * epoch_interval;
}

Micros ClusterConfig::effective_retransmit_interval() const {
    return retransmit_interval != 0 ? retransmit_interval : 3 * epoch_interval;
}

std::vector<NodeId> ClusterConfig::member_ids() const {
    std::vector<NodeId> ids;
    ids.reserve(nodes.size());
    for (const auto& m : nodes) ids.push_back(m.id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

void ClusterConfig::validate() const {
    if (nodes.empty()) throw std::invalid_argument("cluster has no taas nodes");
    std::set<NodeId> ids;
    std::set<std::string> addrs;
    for (const auto& m : nodes) {
        if (!ids.insert(m.id).second) throw std::invalid_argument("duplicate node id " + std::to_string(m.id.value));
        if (!m.address.empty() && !addrs.insert(m.address).second) {
            throw std::invalid_argument("duplicate address " + m.address);
        }
    }
    std::set<std::uint32_t> shards;
    for (const auto& s : storage) {
        if (!shards.insert(s.shard).second) throw std::invalid_argument("duplicate storage shard");
        if (!s.address.empty() && !addrs.insert(s.address).second) {
            throw std::invalid_argument("duplicate address " + s.address);
        }
    }
    if (effective_quorum() == 0 || effective_quorum() > nodes.size()) {
        throw std::invalid_argument("quorum must be in [1, n]");
    }
    if (epoch_interval <= 0) throw std::invalid_argument("epoch interval must be positive");
}

namespace {

std::int64_t parse_int(std::string_view s, std::string_view what) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw std::invalid_argument("bad integer for " + std::string(what) + ": " + std::string(s));
    }
    return v;
}

std::string range_token(const std::string& s) { return s.empty() ? "-" : s; }
std::string untoken(const std::string& s) { return s == "-" ? "" : s; }

}  // namespace

ClusterConfig ClusterConfig::parse(std::string_view text) {
    ClusterConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        auto need = [&](std::size_t n) {
            if (tok.size() != n) {
                throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected " +
                                            std::to_string(n) + " fields");
            }
        };
        const auto& k = tok[0];
        if (k == "epoch_ms") {
            need(2);
            cfg.epoch_interval = parse_int(tok[1], k) * 1000;
        } else if (k == "quorum") {
            need(2);
            cfg.quorum = static_cast<std::uint32_t>(parse_int(tok[1], k));
        } else if (k == "retry_budget") {
            need(2);
            cfg.retry_budget = static_cast<std::uint32_t>(parse_int(tok[1], k));
        } else if (k == "peer_timeout_ms") {
            need(2);
            cfg.peer_timeout = parse_int(tok[1], k) * 1000;
        } else if (k == "retransmit_ms") {
            need(2);
            cfg.retransmit_interval = parse_int(tok[1], k) * 1000;
        } else if (k == "chunk_bytes") {
            need(2);
            cfg.chunk_bytes = static_cast<std::size_t>(parse_int(tok[1], k));
        } else if (k == "taas") {
            need(3);
            cfg.nodes.push_back({NodeId{static_cast<std::uint32_t>(parse_int(tok[1], k))}, tok[2]});
        } else if (k == "storage") {
            need(5);
            cfg.storage.push_back(
                {static_cast<std::uint32_t>(parse_int(tok[1], k)), tok[2], untoken(tok[3]), untoken(tok[4])});
        } else {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key " + k);
        }
    }
    std::sort(cfg.nodes.begin(), cfg.nodes.end(), [](const Member& a, const Member& b) { return a.id < b.id; });
    cfg.validate();
    return cfg;
}

std::string ClusterConfig::format() const {
    std::ostringstream out;
    out << "epoch_ms " << epoch_interval / 1000 << "\n";
    if (quorum != 0) out << "quorum " << quorum << "\n";
    out << "retry_budget " << retry_budget << "\n";
    if (peer_timeout != 0) out << "peer_timeout_ms " << peer_timeout / 1000 << "\n";
    if (retransmit_interval != 0) out << "retransmit_ms " << retransmit_interval / 1000 << "\n";
    if (chunk_bytes != kDefaultChunkBytes) out << "chunk_bytes " << chunk_bytes << "\n";
    for (const auto& m : nodes) out << "taas " << m.id.value << " " << m.address << "\n";
    for (const auto& s : storage) {
        out << "storage " << s.shard << " " << s.address << " " << range_token(s.range_lo) << " "
            << range_token(s.range_hi) << "\n";
    }
    return out.str();
}

ClusterConfig ClusterConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto cfg = parse(ss.str());
    if (const char* env = std::getenv("TAAS_EPOCH_MS"); env != nullptr && *env != '\0') {
        cfg.epoch_interval = parse_int(env, "TAAS_EPOCH_MS") * 1000;
        cfg.validate();
    }
    return cfg;
}

ClusterConfig ClusterConfig::local(std::uint32_t taas_nodes, std::uint32_t storage_shards, Micros epoch_interval,
                                   std::uint16_t base_port) {
    ClusterConfig cfg;
    cfg.epoch_interval = epoch_interval;
    auto addr = [&](const char* role, std::uint32_t i, std::uint32_t port_off) {
        if (base_port == 0) return std::string("sim:") + role + std::to_string(i);
        return "127.0.0.1:" + std::to_string(base_port + port_off);
    };
    for (std::uint32_t i = 0; i < taas_nodes; ++i) cfg.nodes.push_back({NodeId{i}, addr("taas", i, i)});
    for (std::uint32_t j = 0; j < storage_shards; ++j) {
        cfg.storage.push_back({j, addr("storage", j, 100 + j), "", ""});
    }
    return cfg;
}

std::vector<std::pair<std::string, std::string>> split_key_ranges(std::string_view prefix, std::uint64_t keys,
                                                                  int width, std::uint32_t shards) {
    auto key_at = [&](std::uint64_t i) {
        std::string digits = std::to_string(i);
        if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
        return std::string(prefix) + digits;
    };
    std::vector<std::pair<std::string, std::string>> out;
    for (std::uint32_t s = 0; s < shards; ++s) {
        std::string lo = s == 0 ? "" : key_at(keys * s / shards);
        std::string hi = s + 1 == shards ? "" : key_at(keys * (s + 1) / shards);
        out.emplace_back(std::move(lo), std::move(hi));
    }
    return out;
}

EpochClock::EpochClock(Micros interval, Micros start_time, EpochNumber start_epoch)
    : interval_(interval), boundary_(start_time + interval), current_(start_epoch) {}

std::optional<EpochNumber> EpochClock::advance(Micros now) {
    if (now < boundary_) return std::nullopt;
    ++current_;
    boundary_ += interval_;
    tick_ = 0;
    return current_;
}

void EpochClock::resume(EpochNumber epoch, Micros now, EpochNumber catch_up_to) {
    current_ = epoch;
    tick_ = 0;
    if (catch_up_to > epoch) {
        boundary_ = now - static_cast<Micros>(catch_up_to - epoch - 1) * interval_;
    } else {
        boundary_ = now + interval_;
    }
}

void put(ByteWriter& w, const AbortMarker& v) {
    put(w, v.txn_id);
    put(w, v.ts);
    w.u8(static_cast<std::uint8_t>(v.reason));
}

void get(ByteReader& r, AbortMarker& v) {
    get(r, v.txn_id);
    get(r, v.ts);
    auto raw = r.u8();
    if (raw >= kAbortReasonCount) throw DecodeError("invalid abort reason");
    v.reason = static_cast<AbortReason>(raw);
}

void put(ByteWriter& w, const NodeBatch& v) {
    w.u32(static_cast<std::uint32_t>(v.txns.size()));
    for (const auto& t : v.txns) put(w, t);
    w.u32(static_cast<std::uint32_t>(v.early_aborts.size()));
    for (const auto& m : v.early_aborts) put(w, m);
}

void get(ByteReader& r, NodeBatch& v) {
    v.txns.resize(r.count(30));
    for (auto& t : v.txns) get(r, t);
    v.early_aborts.resize(r.count(29));
    for (auto& m : v.early_aborts) get(r, m);
}

void put(ByteWriter& w, const BatchMessage& v) {
    w.u32(v.from.value);
    w.u64(v.epoch);
    w.u32(v.seq);
    w.boolean(v.terminal);
    w.u32(static_cast<std::uint32_t>(v.txns.size()));
    for (const auto& t : v.txns) put(w, t);
    w.u32(static_cast<std::uint32_t>(v.early_aborts.size()));
    for (const auto& m : v.early_aborts) put(w, m);
}

void get(ByteReader& r, BatchMessage& v) {
    v.from.value = r.u32();
    v.epoch = r.u64();
    v.seq = r.u32();
    v.terminal = r.boolean();
    v.txns.resize(r.count(30));
    for (auto& t : v.txns) get(r, t);
    v.early_aborts.resize(r.count(29));
    for (auto& m : v.early_aborts) get(r, m);
}

std::vector<BatchMessage> chunk_batch(NodeId from, EpochNumber epoch, const NodeBatch& batch, std::size_t max_bytes) {
    std::vector<BatchMessage> chunks;
    BatchMessage cur{from, epoch, 0, false, {}, {}};
    std::size_t cur_bytes = 0;
    auto flush = [&] {
        chunks.push_back(std::move(cur));
        cur = BatchMessage{from, epoch, static_cast<std::uint32_t>(chunks.size()), false, {}, {}};
        cur_bytes = 0;
    };
    for (const auto& t : batch.txns) {
        std::size_t sz = encode(t).size();
        if (cur_bytes > 0 && cur_bytes + sz > max_bytes) flush();
        cur.txns.push_back(t);
        cur_bytes += sz;
    }
    for (const auto& m : batch.early_aborts) {
        std::size_t sz = encode(m).size();
        if (cur_bytes > 0 && cur_bytes + sz > max_bytes) flush();
        cur.early_aborts.push_back(m);
        cur_bytes += sz;
    }
    cur.terminal = true;
    chunks.push_back(std::move(cur));
    return chunks;
}

BatchAssembler::Offer BatchAssembler::offer(const BatchMessage& msg) {
    for (const auto& t : msg.txns) {
        if (t.ts.epoch != msg.epoch || t.ts.node != msg.from) return Offer::Rejected;
    }
    for (const auto& m : msg.early_aborts) {
        if (m.ts.epoch != msg.epoch || m.ts.node != msg.from) return Offer::Rejected;
    }
    auto& p = parts_[{msg.epoch, msg.from}];
    if (p.assembled) return Offer::AlreadyComplete;
    if (p.terminal_seq && msg.seq > *p.terminal_seq) return Offer::Rejected;
    if (msg.terminal && !p.chunks.empty() && p.chunks.rbegin()->first > msg.seq) return Offer::Rejected;
    if (!p.chunks.emplace(msg.seq, msg).second) return Offer::Duplicate;
    if (msg.terminal) p.terminal_seq = msg.seq;
    if (!p.terminal_seq || p.chunks.size() != *p.terminal_seq + 1) return Offer::Buffered;

    NodeBatch b;
    for (auto& [seq, chunk] : p.chunks) {
        b.txns.insert(b.txns.end(), chunk.txns.begin(), chunk.txns.end());
        b.early_aborts.insert(b.early_aborts.end(), chunk.early_aborts.begin(), chunk.early_aborts.end());
    }
    p.chunks.clear();
    p.assembled = std::move(b);
    return Offer::Completed;
}

void BatchAssembler::put_complete(NodeId from, EpochNumber epoch, NodeBatch batch) {
    auto& p = parts_[{epoch, from}];
    p.chunks.clear();
    p.assembled = std::move(batch);
}

bool BatchAssembler::complete(NodeId from, EpochNumber epoch) const {
    auto it = parts_.find({epoch, from});
    return it != parts_.end() && it->second.assembled.has_value();
}

const NodeBatch* BatchAssembler::batch(NodeId from, EpochNumber epoch) const {
    auto it = parts_.find({epoch, from});
    if (it == parts_.end() || !it->second.assembled) return nullptr;
    return &*it->second.assembled;
}

std::vector<NodeId> BatchAssembler::missing(EpochNumber epoch, std::span<const NodeId> members) const {
    std::vector<NodeId> out;
    for (auto id : members) {
        if (!complete(id, epoch)) out.push_back(id);
    }
    return out;
}

std::optional<MergeInput> BatchAssembler::collect(EpochNumber epoch, std::span<const NodeId> members) const {
    MergeInput in;
    in.epoch = epoch;
    for (auto id : members) {
        const auto* b = batch(id, epoch);
        if (b == nullptr) return std::nullopt;
        in.per_node_batches.emplace(id, *b);
    }
    return in;
}

void BatchAssembler::drop_through(EpochNumber epoch) {
    parts_.erase(parts_.begin(), parts_.upper_bound({epoch, NodeId{UINT32_MAX}}));
}

std::size_t BatchAssembler::pending_epochs() const {
    std::set<EpochNumber> epochs;
    for (const auto& [k, v] : parts_) epochs.insert(k.first);
    return epochs.size();
}

BroadcastTracker::BroadcastTracker(NodeId self, std::vector<NodeId> members, std::uint32_t quorum,
                                   Micros retransmit_interval, std::uint32_t retry_budget)
    : self_(self),
      members_(std::move(members)),
      quorum_(quorum),
      retransmit_interval_(retransmit_interval),
      retry_budget_(retry_budget) {}

void BroadcastTracker::start(EpochNumber epoch, Micros now) {
    State s;
    s.acked.insert(self_);
    s.outcome.acks = 1;
    s.outcome.kind = s.outcome.acks >= quorum_ ? QuorumOutcome::Kind::Achieved : QuorumOutcome::Kind::Pending;
    s.backoff = retransmit_interval_;
    s.next_retransmit = now + retransmit_interval_;
    epochs_[epoch] = s;
}

std::optional<QuorumOutcome> BroadcastTracker::on_ack(NodeId from, EpochNumber epoch) {
    auto it = epochs_.find(epoch);
    if (it == epochs_.end()) return std::nullopt;
    auto& s = it->second;
    if (!s.acked.insert(from).second) return std::nullopt;
    s.outcome.acks = static_cast<std::uint32_t>(s.acked.size());
    if (s.outcome.kind != QuorumOutcome::Kind::Achieved && s.outcome.acks >= quorum_) {
        s.outcome.kind = QuorumOutcome::Kind::Achieved;
        return s.outcome;
    }
    return std::nullopt;
}

std::vector<BroadcastTracker::Due> BroadcastTracker::due(Micros now) {
    std::vector<Due> out;
    for (auto& [epoch, s] : epochs_) {
        if (now < s.next_retransmit) continue;
        Due d{epoch, {}};
        for (auto id : members_) {
            if (!s.acked.contains(id)) d.peers.push_back(id);
        }
        if (d.peers.empty()) continue;
        ++s.attempts;
        if (s.outcome.kind == QuorumOutcome::Kind::Pending && s.attempts > retry_budget_) {
            s.outcome.kind = QuorumOutcome::Kind::Failed;
            failed_.push_back(epoch);
        }
        // Once quorum is settled the remaining peers are chased with backoff.
        if (s.outcome.kind != QuorumOutcome::Kind::Pending) {
            s.backoff = std::min(s.backoff * 2, retransmit_interval_ * 8);
        }
        s.next_retransmit = now + s.backoff;
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<EpochNumber> BroadcastTracker::take_failed() { return std::exchange(failed_, {}); }

QuorumOutcome BroadcastTracker::outcome(EpochNumber epoch) const {
    auto it = epochs_.find(epoch);
    return it == epochs_.end() ? QuorumOutcome{} : it->second.outcome;
}

bool BroadcastTracker::fully_acked(EpochNumber epoch) const {
    auto it = epochs_.find(epoch);
    return it != epochs_.end() && it->second.acked.size() == members_.size();
}

void BroadcastTracker::forget(EpochNumber epoch) { epochs_.erase(epoch); }

std::optional<Micros> BroadcastTracker::next_due() const {
    std::optional<Micros> best;
    for (const auto& [epoch, s] : epochs_) {
        if (s.acked.size() == members_.size()) continue;
        if (!best || s.next_retransmit < *best) best = s.next_retransmit;
    }
    return best;
}

}  // namespace taas
