#include "taas/durable_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <system_error>

#include "taas/epoch_exchange.hpp"

namespace fs = std::filesystem;

namespace taas {

namespace {

enum class WalKind : std::uint8_t { OwnPut = 1, OwnDrop = 2, PeerPut = 3, PeerDropThrough = 4, Counter = 5 };

constexpr std::size_t kCompactBytes = 4u << 20;

[[noreturn]] void throw_errno(const std::string& what) {
    throw std::system_error(errno, std::generic_category(), what);
}

class Fd {
  public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    int get() const { return fd_; }
    explicit operator bool() const { return fd_ >= 0; }

  private:
    int fd_ = -1;
};

Fd open_append(const fs::path& p) {
    int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw_errno("open " + p.string());
    return Fd(fd);
}

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
    while (n > 0) {
        ssize_t w = ::write(fd, data, n);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw_errno("write");
        }
        data += w;
        n -= static_cast<std::size_t>(w);
    }
}

Bytes read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Bytes framed(const Bytes& body) {
    ByteWriter w;
    w.blob(body);
    return w.take();
}

// Yields complete length-prefixed records; returns the offset after the last
// complete one so a torn tail can be truncated.
template <class F>
std::size_t scan_records(const Bytes& data, F&& on_record) {
    std::size_t pos = 0;
    while (data.size() - pos >= 4) {
        ByteReader hdr(ByteView(data.data() + pos, 4));
        std::uint32_t len = hdr.u32();
        if (data.size() - pos - 4 < len) break;
        if (!on_record(ByteView(data.data() + pos + 4, len))) break;
        pos += 4 + len;
    }
    return pos;
}

std::string segment_name(EpochNumber first) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "logs-%020llu.seg", static_cast<unsigned long long>(first));
    return buf;
}

void write_file_atomic(const fs::path& p, const Bytes& data, bool sync) {
    fs::path tmp = p;
    tmp += ".tmp";
    {
        int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd < 0) throw_errno("open " + tmp.string());
        Fd guard(fd);
        write_all(fd, data.data(), data.size());
        if (sync && ::fdatasync(fd) != 0) throw_errno("fdatasync");
    }
    fs::rename(tmp, p);
}

}  // namespace

struct DurableStore::Files {
    fs::path dir;
    bool sync = false;
    Fd wal;
    std::size_t wal_bytes = 0;
    Fd segment;
    std::optional<EpochNumber> segment_first;

    void flush(int fd, std::uint64_t& counter) const {
        if (!sync) return;
        if (::fdatasync(fd) != 0) throw_errno("fdatasync");
        ++counter;
    }
};

DurableStore::DurableStore() = default;
DurableStore::~DurableStore() = default;

std::unique_ptr<DurableStore> DurableStore::open(const fs::path& dir, bool fsync) {
    fs::create_directories(dir);
    auto store = std::make_unique<DurableStore>();

    // Snapshot.
    if (fs::exists(dir / "snapshot.bin")) {
        Bytes data = read_file(dir / "snapshot.bin");
        try {
            if (data.size() < 32) throw DecodeError("short snapshot");
            ByteView body(data.data(), data.size() - 32);
            Digest d = Sha256::of(body);
            if (!std::equal(d.begin(), d.end(), data.end() - 32)) throw DecodeError("snapshot digest mismatch");
            ByteReader r(body);
            EpochNumber e = r.u64();
            Bytes blob = r.blob();
            r.expect_done();
            store->snapshot_ = std::make_pair(e, std::move(blob));
        } catch (const DecodeError&) {
            // A corrupt snapshot is ignored; logs or peers fill in.
        }
    }

    // Log segments, in epoch order.
    std::vector<fs::path> segments;
    for (const auto& ent : fs::directory_iterator(dir)) {
        auto name = ent.path().filename().string();
        if (name.starts_with("logs-") && name.ends_with(".seg")) segments.push_back(ent.path());
    }
    std::sort(segments.begin(), segments.end());
    bool first = true;
    bool broken = false;
    for (const auto& seg : segments) {
        if (broken) {
            fs::remove(seg);
            continue;
        }
        Bytes data = read_file(seg);
        std::size_t good = scan_records(data, [&](ByteView rec) {
            try {
                EpochLog log = decode_epoch_log(rec);
                if (first) {
                    store->log_begin_ = store->log_end_ = log.epoch;
                    first = false;
                }
                if (log.epoch != store->log_end_) return false;
                store->logs_.emplace(log.epoch, std::move(log));
                ++store->log_end_;
                return true;
            } catch (const DecodeError&) {
                return false;
            }
        });
        if (good != data.size()) {
            fs::resize_file(seg, good);
            broken = true;
        }
    }
    if (store->logs_.empty() && store->snapshot_) {
        store->log_begin_ = store->log_end_ = store->snapshot_->first;
    }

    // Batch WAL.
    auto wal_path = dir / "batches.wal";
    if (fs::exists(wal_path)) {
        Bytes data = read_file(wal_path);
        std::size_t good = scan_records(data, [&](ByteView rec) {
            try {
                ByteReader r(rec);
                auto kind = static_cast<WalKind>(r.u8());
                switch (kind) {
                    case WalKind::OwnPut: {
                        EpochNumber e = r.u64();
                        NodeBatch b;
                        get(r, b);
                        store->own_[e] = std::move(b);
                        break;
                    }
                    case WalKind::OwnDrop:
                        store->own_.erase(r.u64());
                        break;
                    case WalKind::PeerPut: {
                        NodeId from{r.u32()};
                        EpochNumber e = r.u64();
                        NodeBatch b;
                        get(r, b);
                        store->peers_[{e, from}] = std::move(b);
                        break;
                    }
                    case WalKind::PeerDropThrough: {
                        EpochNumber e = r.u64();
                        store->peers_.erase(store->peers_.begin(), store->peers_.upper_bound({e, NodeId{UINT32_MAX}}));
                        break;
                    }
                    case WalKind::Counter: {
                        auto name = r.str();
                        store->counters_[name] = r.u64();
                        break;
                    }
                    default:
                        return false;
                }
                r.expect_done();
                return true;
            } catch (const DecodeError&) {
                return false;
            }
        });
        if (good != data.size()) fs::resize_file(wal_path, good);
    }

    store->files_ = std::make_unique<Files>();
    store->files_->dir = dir;
    store->files_->sync = fsync;
    store->maybe_compact();
    if (!store->files_->wal) {
        store->files_->wal = open_append(wal_path);
        store->files_->wal_bytes = fs::file_size(wal_path);
    }
    if (!store->logs_.empty()) {
        // Keep appending to the last surviving segment.
        for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
            if (!fs::exists(*it)) continue;
            store->files_->segment_first = std::stoull(it->filename().string().substr(5, 20));
            store->files_->segment = open_append(*it);
            break;
        }
    }
    return store;
}

void DurableStore::append_log(const EpochLog& log) {
    if (log.epoch < log_end_) return;
    if (log.epoch != log_end_) throw EpochGap(log_end_, log.epoch);
    if (files_) {
        if (!files_->segment || log.epoch >= *files_->segment_first + kSegmentEpochs) {
            files_->segment = open_append(files_->dir / segment_name(log.epoch));
            files_->segment_first = log.epoch;
        }
        Bytes rec = framed(encode_epoch_log(log));
        write_all(files_->segment.get(), rec.data(), rec.size());
        files_->flush(files_->segment.get(), fsyncs_);
    }
    if (logs_.empty()) log_begin_ = log.epoch;
    logs_.emplace(log.epoch, log);
    log_end_ = log.epoch + 1;
}

const EpochLog* DurableStore::log(EpochNumber e) const {
    auto it = logs_.find(e);
    return it == logs_.end() ? nullptr : &it->second;
}

std::vector<EpochLog> DurableStore::logs_from(EpochNumber from) const {
    std::vector<EpochLog> out;
    for (auto it = logs_.lower_bound(from); it != logs_.end(); ++it) out.push_back(it->second);
    return out;
}

void DurableStore::reset_logs(EpochNumber begin) {
    logs_.clear();
    log_begin_ = log_end_ = begin;
    if (files_) {
        files_->segment.reset();
        files_->segment_first.reset();
        for (const auto& ent : fs::directory_iterator(files_->dir)) {
            auto name = ent.path().filename().string();
            if (name.starts_with("logs-") && name.ends_with(".seg")) fs::remove(ent.path());
        }
    }
}

void DurableStore::put_snapshot(EpochNumber next_epoch, Bytes snapshot) {
    if (files_) {
        ByteWriter w;
        w.u64(next_epoch);
        w.blob(snapshot);
        Digest d = Sha256::of(w.bytes());
        w.raw(ByteView(d.data(), d.size()));
        write_file_atomic(files_->dir / "snapshot.bin", w.bytes(), files_->sync);
        if (files_->sync) ++fsyncs_;
    }
    snapshot_ = std::make_pair(next_epoch, std::move(snapshot));
}

void DurableStore::wal_append(const Bytes& body) {
    if (!files_) return;
    Bytes rec = framed(body);
    write_all(files_->wal.get(), rec.data(), rec.size());
    files_->wal_bytes += rec.size();
    files_->flush(files_->wal.get(), fsyncs_);
}

void DurableStore::maybe_compact() {
    if (!files_) return;
    auto wal_path = files_->dir / "batches.wal";
    if (files_->wal && files_->wal_bytes < kCompactBytes) return;

    ByteWriter all;
    auto add = [&](const Bytes& body) { all.blob(body); };
    for (const auto& [e, b] : own_) {
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(WalKind::OwnPut));
        w.u64(e);
        put(w, b);
        add(w.bytes());
    }
    for (const auto& [k, b] : peers_) {
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(WalKind::PeerPut));
        w.u32(k.second.value);
        w.u64(k.first);
        put(w, b);
        add(w.bytes());
    }
    for (const auto& [name, v] : counters_) {
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(WalKind::Counter));
        w.str(name);
        w.u64(v);
        add(w.bytes());
    }
    // Only worth rewriting if it shrinks the file substantially.
    if (files_->wal && all.bytes().size() * 2 > files_->wal_bytes) return;
    files_->wal.reset();
    write_file_atomic(wal_path, all.bytes(), files_->sync);
    files_->wal = open_append(wal_path);
    files_->wal_bytes = all.bytes().size();
}

void DurableStore::put_own_batch(EpochNumber epoch, const NodeBatch& batch) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(WalKind::OwnPut));
    w.u64(epoch);
    put(w, batch);
    wal_append(w.bytes());
    own_[epoch] = batch;
}

void DurableStore::drop_own_batch(EpochNumber epoch) {
    if (!own_.erase(epoch)) return;
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(WalKind::OwnDrop));
    w.u64(epoch);
    wal_append(w.bytes());
    maybe_compact();
}

void DurableStore::put_peer_batch(NodeId from, EpochNumber epoch, const NodeBatch& batch) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(WalKind::PeerPut));
    w.u32(from.value);
    w.u64(epoch);
    put(w, batch);
    wal_append(w.bytes());
    peers_[{epoch, from}] = batch;
}

void DurableStore::drop_peer_batches_through(EpochNumber epoch) {
    auto end = peers_.upper_bound({epoch, NodeId{UINT32_MAX}});
    if (peers_.begin() == end) return;
    peers_.erase(peers_.begin(), end);
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(WalKind::PeerDropThrough));
    w.u64(epoch);
    wal_append(w.bytes());
    maybe_compact();
}

void DurableStore::put_counter(const std::string& name, std::uint64_t value) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(WalKind::Counter));
    w.str(name);
    w.u64(value);
    wal_append(w.bytes());
    counters_[name] = value;
}

std::optional<std::uint64_t> DurableStore::counter(const std::string& name) const {
    auto it = counters_.find(name);
    if (it == counters_.end()) return std::nullopt;
    return it->second;
}

bool DurableStore::empty() const {
    return logs_.empty() && !snapshot_ && own_.empty() && peers_.empty() && counters_.empty();
}

void DurableStore::wipe() {
    logs_.clear();
    log_begin_ = log_end_ = 0;
    snapshot_.reset();
    own_.clear();
    peers_.clear();
    counters_.clear();
    if (files_) {
        files_->wal.reset();
        files_->segment.reset();
        files_->segment_first.reset();
        for (const auto& ent : fs::directory_iterator(files_->dir)) fs::remove_all(ent.path());
        files_->wal = open_append(files_->dir / "batches.wal");
        files_->wal_bytes = 0;
    }
}

}  // namespace taas
