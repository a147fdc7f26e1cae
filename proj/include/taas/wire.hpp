#pragma once

// Message protocol shared by peers, clients and storage shards. A message is
// one kind byte followed by the kind's canonical body. On stream sockets
// each message travels in a frame: u32 BE length (of what follows), u32 BE
// sender endpoint, message.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "taas/epoch_exchange.hpp"
#include "taas/runtime.hpp"
#include "taas/txn_model.hpp"

namespace taas {

enum class MsgKind : std::uint8_t {
    Batch = 1,
    BatchTerminal = 2,
    Ack = 3,
    SnapshotReq = 4,
    SnapshotResp = 5,
    PostTxn = 10,
    Verdict = 11,
    QueryVerdict = 12,
    GetLatestVersion = 13,
    LatestVersionResp = 14,
    PushLog = 20,
    PushAck = 21,
    GetData = 22,
    GetMeta = 23,
    DataResp = 24,
    MetaResp = 25,
};

struct SnapshotReq {
    NodeId requester;
    EpochNumber from_epoch = 0;  // first epoch log the requester lacks
    bool operator==(const SnapshotReq&) const = default;
};

struct HeldBatch {
    EpochNumber epoch = 0;
    NodeBatch batch;
    bool operator==(const HeldBatch&) const = default;
};

struct SnapshotResp {
    NodeId responder;
    EpochNumber current_epoch = 0;  // responder's open epoch
    EpochNumber applied_next = 0;   // first epoch the responder has not merged
    std::optional<Bytes> snapshot;  // VersionTable snapshot; logs then start at its epoch
    std::vector<EpochLog> logs;
    std::vector<HeldBatch> held;    // requester's own unmerged batches held by the responder
    bool operator==(const SnapshotResp&) const = default;
};

struct PostTxn {
    TxnPayload payload;
    std::uint32_t attempt = 0;
    bool operator==(const PostTxn&) const = default;
};

// `known` is false only when answering a query for an undecided TxnId.
struct VerdictMsg {
    bool known = true;
    TxnVerdict verdict;
    bool operator==(const VerdictMsg&) const = default;
};

struct QueryVerdict {
    TxnId txn_id;
    bool operator==(const QueryVerdict&) const = default;
};

struct GetLatestVersion {
    std::uint64_t request_id = 0;
    std::string key;
    bool operator==(const GetLatestVersion&) const = default;
};

struct LatestVersionResp {
    std::uint64_t request_id = 0;
    std::string key;
    ObservedVersion version;
    bool operator==(const LatestVersionResp&) const = default;
};

struct PushLog {
    EpochLog log;
    bool operator==(const PushLog&) const = default;
};

struct PushAck {
    std::uint32_t shard = 0;
    EpochNumber applied_next = 0;
    bool operator==(const PushAck&) const = default;
};

struct GetData {
    std::uint64_t request_id = 0;
    std::string key;
    bool operator==(const GetData&) const = default;
};

struct DataResp {
    std::uint64_t request_id = 0;
    bool found = false;
    VersionedRecord record;
    bool operator==(const DataResp&) const = default;
};

struct GetMeta {
    std::uint64_t request_id = 0;
    std::string name;
    bool operator==(const GetMeta&) const = default;
};

struct MetaResp {
    std::uint64_t request_id = 0;
    bool found = false;
    Bytes blob;
    bool operator==(const MetaResp&) const = default;
};

using Message = std::variant<BatchMessage, AckMessage, SnapshotReq, SnapshotResp, PostTxn, VerdictMsg, QueryVerdict,
                             GetLatestVersion, LatestVersionResp, PushLog, PushAck, GetData, DataResp, GetMeta,
                             MetaResp>;

MsgKind kind_of(const Message& m);
Bytes encode_message(const Message& m);
// Throws DecodeError.
Message decode_message(ByteView bytes);

inline constexpr std::size_t kFrameHeaderBytes = 8;
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

Bytes encode_frame(EndpointId from, ByteView message);

// Incremental frame parser for a byte stream.
class FrameDecoder {
  public:
    struct Frame {
        EndpointId from;
        Bytes message;
    };
    void feed(ByteView data);
    // Next complete frame, if any. Throws DecodeError on an oversized frame.
    std::optional<Frame> next();

  private:
    Bytes buf_;
    std::size_t pos_ = 0;
};

}  // namespace taas
