#pragma once

// Benchmark workload shapes: YCSB-style read/write mixes over a Zipfian key
// distribution, the account Transfer/Deposit pair, and a composite mix of
// sub-transactions over three keyspaces. The seed fixes the whole stream.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "taas/storage_node.hpp"
#include "taas/txn_model.hpp"

namespace taas {

enum class WorkloadKind { Ycsb, TransferDeposit, Composite };

struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::Ycsb;
    std::string name = "ycsb";

    // Ycsb
    std::uint32_t read_pct = 95;
    std::uint32_t write_pct = 5;
    double zipf_theta = 0.99;
    std::uint64_t keys = 10'000;
    std::uint32_t ops_per_txn = 10;
    std::uint32_t value_bytes = 16;

    // TransferDeposit
    std::uint64_t accounts = 1'000;
    std::int64_t initial_balance = 1'000;
    std::uint32_t deposit_pct = 20;

    // Composite: per-keyspace op counts; keys per keyspace comes from `keys`.
    std::uint32_t kv_ops = 4;
    std::uint32_t row_ops = 4;
    std::uint32_t graph_ops = 1;

    std::uint32_t clients = 8;
    std::uint64_t txn_count = 10'000;
    std::uint64_t seed = 1;
    IsolationLevel isolation = IsolationLevel::SnapshotIsolation;
    ConsistencyMode consistency = ConsistencyMode::Strong;

    // ycsb (95/5), ycsb-hc (50/50), ycsb-ro, transfer, composite.
    static WorkloadSpec named(std::string_view name);

    // Throws std::invalid_argument.
    void validate() const;

    // The single keyspace every key of this workload lives in.
    TableDescriptor table() const;
    // Initial record values the load phase writes, in key order.
    std::string initial_value(std::uint64_t index) const;
};

// YCSB's Zipfian generator (Gray et al.), with item scrambling so hot keys
// spread across shards.
class ZipfianGenerator {
  public:
    ZipfianGenerator(std::uint64_t items, double theta);
    std::uint64_t next(std::mt19937_64& rng);
    // Unscrambled rank: 0 is the hottest item.
    std::uint64_t next_rank(std::mt19937_64& rng);

  private:
    std::uint64_t items_;
    double theta_;
    double alpha_;
    double zetan_;
    double eta_;
    double half_pow_theta_;
};

struct Op {
    enum class Kind { Read, Write, Add };
    Kind kind = Kind::Read;
    std::string key;
    std::string value;      // Write
    std::int64_t delta = 0;  // Add: read the integer balance, write it plus delta
    std::string label;      // composite sub-transaction, empty otherwise
};

struct TxnPlan {
    enum class Type { Plain, Transfer, Deposit, Composite };
    Type type = Type::Plain;
    std::vector<Op> ops;
    // Net balance change if it commits (Deposit amount, 0 otherwise).
    std::int64_t net_delta = 0;
};

// Per-client operation stream. Streams for different client indices are
// independent and each is a pure function of (spec, client).
class WorkloadGenerator {
  public:
    WorkloadGenerator(const WorkloadSpec& spec, std::uint32_t client);
    TxnPlan next();

  private:
    std::string value();
    std::uint64_t pick(std::uint64_t base);

    WorkloadSpec spec_;
    std::mt19937_64 rng_;
    ZipfianGenerator zipf_;
    std::uint64_t counter_ = 0;
};

std::string_view to_string(TxnPlan::Type t);

}  // namespace taas
