#include "taas/wire.hpp"

namespace taas {

namespace {

void put_opt_bytes(ByteWriter& w, const std::optional<Bytes>& b) {
    w.boolean(b.has_value());
    if (b) w.blob(*b);
}

struct Encoder {
    ByteWriter& w;

    void operator()(const BatchMessage& m) {
        w.u8(static_cast<std::uint8_t>(m.terminal ? MsgKind::BatchTerminal : MsgKind::Batch));
        put(w, m);
    }
    void operator()(const AckMessage& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::Ack));
        w.u32(m.from.value);
        w.u32(m.acking_node.value);
        w.u64(m.acking_epoch);
    }
    void operator()(const SnapshotReq& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::SnapshotReq));
        w.u32(m.requester.value);
        w.u64(m.from_epoch);
    }
    void operator()(const SnapshotResp& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::SnapshotResp));
        w.u32(m.responder.value);
        w.u64(m.current_epoch);
        w.u64(m.applied_next);
        put_opt_bytes(w, m.snapshot);
        w.u32(static_cast<std::uint32_t>(m.logs.size()));
        for (const auto& l : m.logs) put(w, l);
        w.u32(static_cast<std::uint32_t>(m.held.size()));
        for (const auto& h : m.held) {
            w.u64(h.epoch);
            put(w, h.batch);
        }
    }
    void operator()(const PostTxn& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::PostTxn));
        put(w, m.payload);
        w.u32(m.attempt);
    }
    void operator()(const VerdictMsg& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::Verdict));
        w.boolean(m.known);
        put(w, m.verdict);
    }
    void operator()(const QueryVerdict& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::QueryVerdict));
        put(w, m.txn_id);
    }
    void operator()(const GetLatestVersion& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::GetLatestVersion));
        w.u64(m.request_id);
        w.str(m.key);
    }
    void operator()(const LatestVersionResp& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::LatestVersionResp));
        w.u64(m.request_id);
        w.str(m.key);
        put(w, m.version);
    }
    void operator()(const PushLog& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::PushLog));
        put(w, m.log);
    }
    void operator()(const PushAck& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::PushAck));
        w.u32(m.shard);
        w.u64(m.applied_next);
    }
    void operator()(const GetData& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::GetData));
        w.u64(m.request_id);
        w.str(m.key);
    }
    void operator()(const DataResp& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::DataResp));
        w.u64(m.request_id);
        w.boolean(m.found);
        put(w, m.record);
    }
    void operator()(const GetMeta& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::GetMeta));
        w.u64(m.request_id);
        w.str(m.name);
    }
    void operator()(const MetaResp& m) {
        w.u8(static_cast<std::uint8_t>(MsgKind::MetaResp));
        w.u64(m.request_id);
        w.boolean(m.found);
        w.blob(m.blob);
    }
};

}  // namespace

MsgKind kind_of(const Message& m) {
    ByteWriter w;
    std::visit(Encoder{w}, m);
    return static_cast<MsgKind>(w.bytes().front());
}

Bytes encode_message(const Message& m) {
    ByteWriter w;
    std::visit(Encoder{w}, m);
    return w.take();
}

Message decode_message(ByteView bytes) {
    ByteReader r(bytes);
    auto kind = static_cast<MsgKind>(r.u8());
    Message out;
    switch (kind) {
        case MsgKind::Batch:
        case MsgKind::BatchTerminal: {
            BatchMessage m;
            get(r, m);
            if (m.terminal != (kind == MsgKind::BatchTerminal)) throw DecodeError("batch terminal flag mismatch");
            out = std::move(m);
            break;
        }
        case MsgKind::Ack: {
            AckMessage m;
            m.from.value = r.u32();
            m.acking_node.value = r.u32();
            m.acking_epoch = r.u64();
            out = m;
            break;
        }
        case MsgKind::SnapshotReq: {
            SnapshotReq m;
            m.requester.value = r.u32();
            m.from_epoch = r.u64();
            out = m;
            break;
        }
        case MsgKind::SnapshotResp: {
            SnapshotResp m;
            m.responder.value = r.u32();
            m.current_epoch = r.u64();
            m.applied_next = r.u64();
            if (r.boolean()) m.snapshot = r.blob();
            m.logs.resize(r.count(48));
            for (auto& l : m.logs) get(r, l);
            m.held.resize(r.count(16));
            for (auto& h : m.held) {
                h.epoch = r.u64();
                get(r, h.batch);
            }
            out = std::move(m);
            break;
        }
        case MsgKind::PostTxn: {
            PostTxn m;
            get(r, m.payload);
            m.attempt = r.u32();
            out = std::move(m);
            break;
        }
        case MsgKind::Verdict: {
            VerdictMsg m;
            m.known = r.boolean();
            get(r, m.verdict);
            out = m;
            break;
        }
        case MsgKind::QueryVerdict: {
            QueryVerdict m;
            get(r, m.txn_id);
            out = m;
            break;
        }
        case MsgKind::GetLatestVersion: {
            GetLatestVersion m;
            m.request_id = r.u64();
            m.key = r.str();
            out = std::move(m);
            break;
        }
        case MsgKind::LatestVersionResp: {
            LatestVersionResp m;
            m.request_id = r.u64();
            m.key = r.str();
            get(r, m.version);
            out = std::move(m);
            break;
        }
        case MsgKind::PushLog: {
            PushLog m;
            get(r, m.log);
            out = std::move(m);
            break;
        }
        case MsgKind::PushAck: {
            PushAck m;
            m.shard = r.u32();
            m.applied_next = r.u64();
            out = m;
            break;
        }
        case MsgKind::GetData: {
            GetData m;
            m.request_id = r.u64();
            m.key = r.str();
            out = std::move(m);
            break;
        }
        case MsgKind::DataResp: {
            DataResp m;
            m.request_id = r.u64();
            m.found = r.boolean();
            get(r, m.record);
            out = std::move(m);
            break;
        }
        case MsgKind::GetMeta: {
            GetMeta m;
            m.request_id = r.u64();
            m.name = r.str();
            out = std::move(m);
            break;
        }
        case MsgKind::MetaResp: {
            MetaResp m;
            m.request_id = r.u64();
            m.found = r.boolean();
            m.blob = r.blob();
            out = std::move(m);
            break;
        }
        default:
            throw DecodeError("unknown message kind " + std::to_string(static_cast<int>(kind)));
    }
    r.expect_done();
    return out;
}

Bytes encode_frame(EndpointId from, ByteView message) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(message.size() + 4));
    w.u32(from);
    w.raw(message);
    return w.take();
}

void FrameDecoder::feed(ByteView data) {
    if (pos_ > 0 && pos_ == buf_.size()) {
        buf_.clear();
        pos_ = 0;
    }
    buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<FrameDecoder::Frame> FrameDecoder::next() {
    if (buf_.size() - pos_ < 4) return std::nullopt;
    ByteReader hdr(ByteView(buf_.data() + pos_, 4));
    std::uint32_t len = hdr.u32();
    if (len < 4 || len > kMaxFrameBytes) throw DecodeError("bad frame length");
    if (buf_.size() - pos_ < 4 + static_cast<std::size_t>(len)) return std::nullopt;
    ByteReader body(ByteView(buf_.data() + pos_ + 4, len));
    Frame f;
    f.from = body.u32();
    f.message.assign(buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 8),
                     buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 4 + len));
    pos_ += 4 + len;
    if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
    }
    return f;
}

}  // namespace taas
