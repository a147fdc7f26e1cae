#include "taas/storage_node.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <fstream>
#include <system_error>

#include "taas/occ_engine.hpp"
#include "taas/wire.hpp"

namespace taas {

const ShardMap::Entry* ShardMap::lookup(std::string_view key) const {
    for (const auto& e : entries) {
        if (e.range.contains(key)) return &e;
    }
    return nullptr;
}

Bytes ShardMap::encode() const {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.u32(e.shard);
        w.u32(e.endpoint);
        w.str(e.range.lo);
        w.str(e.range.hi);
    }
    return w.take();
}

ShardMap ShardMap::decode(ByteView bytes) {
    ByteReader r(bytes);
    ShardMap m;
    m.entries.resize(r.count(16));
    for (auto& e : m.entries) {
        e.shard = r.u32();
        e.endpoint = r.u32();
        e.range.lo = r.str();
        e.range.hi = r.str();
    }
    r.expect_done();
    return m;
}

std::string TableDescriptor::key(std::uint64_t index) const {
    std::string digits = std::to_string(index);
    if (digits.size() < key_width) digits.insert(0, key_width - digits.size(), '0');
    return key_prefix + digits;
}

Bytes TableDescriptor::encode() const {
    ByteWriter w;
    w.str(name);
    w.str(key_prefix);
    w.u64(keys);
    w.u32(key_width);
    w.u32(value_bytes);
    return w.take();
}

TableDescriptor TableDescriptor::decode(ByteView bytes) {
    ByteReader r(bytes);
    TableDescriptor t;
    t.name = r.str();
    t.key_prefix = r.str();
    t.keys = r.u64();
    t.key_width = r.u32();
    t.value_bytes = r.u32();
    r.expect_done();
    return t;
}

std::optional<VersionedRecord> RecordCache::get(std::string_view key) {
    auto it = index_.find(std::string(key));
    if (it == index_.end()) {
        ++misses_;
        return std::nullopt;
    }
    ++hits_;
    lru_.splice(lru_.begin(), lru_, it->second);
    return *it->second;
}

void RecordCache::put(const VersionedRecord& rec) {
    if (capacity_ == 0) return;
    auto it = index_.find(rec.key);
    if (it != index_.end()) {
        *it->second = rec;
        lru_.splice(lru_.begin(), lru_, it->second);
        return;
    }
    lru_.push_front(rec);
    index_.emplace(rec.key, lru_.begin());
    while (index_.size() > capacity_) {
        index_.erase(lru_.back().key);
        lru_.pop_back();
    }
}

void RecordCache::invalidate(std::string_view key) {
    auto it = index_.find(std::string(key));
    if (it == index_.end()) return;
    lru_.erase(it->second);
    index_.erase(it);
}

KvStorage::KvStorage(KvStorageOptions opts) : opts_(std::move(opts)), cache_(opts_.cache_entries) {
    if (opts_.persist_path) {
        replay_file();
        fd_ = ::open(opts_.persist_path->c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) throw std::system_error(errno, std::generic_category(), "open " + opts_.persist_path->string());
    }
}

KvStorage::~KvStorage() {
    if (fd_ >= 0) ::close(fd_);
}

void KvStorage::replay_file() {
    std::ifstream in(*opts_.persist_path, std::ios::binary);
    if (!in) return;
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    while (data.size() - pos >= 4) {
        ByteReader hdr(ByteView(data.data() + pos, 4));
        auto len = hdr.u32();
        if (data.size() - pos - 4 < len) break;
        try {
            auto log = decode_epoch_log(ByteView(data.data() + pos + 4, len));
            if (log.epoch != applied_next_) break;
            for (std::size_t i = 0; i < log.committed.size(); ++i) {
                for (const auto& w : log.committed[i].writes) {
                    if (!opts_.range.contains(w.key)) continue;
                    data_[w.key] = VersionedRecord{w.key, w.value, Version{log.epoch, static_cast<std::uint32_t>(i)}};
                }
            }
            ++applied_next_;
        } catch (const DecodeError&) {
            break;
        }
        pos += 4 + len;
    }
    if (pos != data.size()) std::filesystem::resize_file(*opts_.persist_path, pos);
}

EpochNumber KvStorage::apply_epoch(const EpochLog& log) {
    std::unique_lock lock(mu_);
    if (log.epoch < applied_next_) return applied_next_;
    if (log.epoch > applied_next_) throw EpochGap(applied_next_, log.epoch);

    if (fd_ >= 0) {
        ByteWriter w;
        w.blob(encode_epoch_log(log));
        const auto& b = w.bytes();
        std::size_t off = 0;
        while (off < b.size()) {
            ssize_t n = ::write(fd_, b.data() + off, b.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw std::system_error(errno, std::generic_category(), "storage append");
            }
            off += static_cast<std::size_t>(n);
        }
        if (opts_.fsync) ::fdatasync(fd_);
    }

    std::lock_guard cache_lock(cache_mu_);
    for (std::size_t i = 0; i < log.committed.size(); ++i) {
        Version v{log.epoch, static_cast<std::uint32_t>(i)};
        for (const auto& w : log.committed[i].writes) {
            if (!opts_.range.contains(w.key)) continue;
            data_[w.key] = VersionedRecord{w.key, w.value, v};
            cache_.invalidate(w.key);
        }
    }
    return ++applied_next_;
}

std::optional<VersionedRecord> KvStorage::get_data(std::string_view key) const {
    std::shared_lock lock(mu_);
    if (opts_.cache_entries > 0) {
        std::lock_guard cache_lock(cache_mu_);
        if (auto hit = cache_.get(key)) return hit;
    }
    auto it = data_.find(key);
    if (it == data_.end()) return std::nullopt;
    if (opts_.cache_entries > 0) {
        std::lock_guard cache_lock(cache_mu_);
        cache_.put(it->second);
    }
    return it->second;
}

Bytes KvStorage::get_meta(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = meta_.find(name);
    if (it == meta_.end()) throw UnknownMeta(name);
    return it->second;
}

EpochNumber KvStorage::applied_next() const {
    std::shared_lock lock(mu_);
    return applied_next_;
}

void KvStorage::register_meta(const std::string& name, Bytes blob) {
    std::unique_lock lock(mu_);
    meta_[name] = std::move(blob);
}

Digest KvStorage::state_digest() const {
    std::shared_lock lock(mu_);
    Sha256 h;
    for (const auto& [k, rec] : data_) {
        ByteWriter w;
        put(w, rec);
        h.update(w.bytes());
    }
    return h.finish();
}

std::size_t KvStorage::record_count() const {
    std::shared_lock lock(mu_);
    return data_.size();
}

std::map<std::string, VersionedRecord> KvStorage::records() const {
    std::shared_lock lock(mu_);
    return {data_.begin(), data_.end()};
}

std::uint64_t KvStorage::cache_hits() const {
    std::lock_guard lock(cache_mu_);
    return cache_.hits();
}

std::uint64_t KvStorage::cache_misses() const {
    std::lock_guard lock(cache_mu_);
    return cache_.misses();
}

StorageNode::StorageNode(StorageNodeOptions opts, std::shared_ptr<KvStorage> store)
    : opts_(opts), store_(std::move(store)) {}

void StorageNode::on_start(Runtime&) {}
void StorageNode::on_timer(Runtime&) {}

void StorageNode::on_message(Runtime& rt, EndpointId from, ByteView message) {
    Message msg;
    try {
        msg = decode_message(message);
    } catch (const DecodeError&) {
        return;
    }
    if (auto* push = std::get_if<PushLog>(&msg)) {
        rt.charge(opts_.apply_cost * static_cast<Micros>(push->log.committed.size()));
        EpochNumber next;
        try {
            auto before = store_->applied_next();
            next = store_->apply_epoch(push->log);
            if (next == before) ++duplicates_;
        } catch (const EpochGap& gap) {
            ++gaps_;
            next = gap.expected;
        }
        rt.send(from, encode_message(PushAck{opts_.shard, next}));
    } else if (auto* get = std::get_if<GetData>(&msg)) {
        rt.charge(opts_.get_cost);
        DataResp resp;
        resp.request_id = get->request_id;
        if (auto rec = store_->get_data(get->key)) {
            resp.found = true;
            resp.record = std::move(*rec);
        } else {
            resp.record.key = get->key;
        }
        rt.send(from, encode_message(resp));
    } else if (auto* meta = std::get_if<GetMeta>(&msg)) {
        MetaResp resp;
        resp.request_id = meta->request_id;
        try {
            resp.blob = store_->get_meta(meta->name);
            resp.found = true;
        } catch (const UnknownMeta&) {
        }
        rt.send(from, encode_message(resp));
    }
}

}  // namespace taas
