#include "taas/workload.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace taas {

namespace {

constexpr std::uint32_t kKeyWidth = 10;

std::uint64_t fnv1a(std::uint64_t v) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= v & 0xff;
        h *= 0x100000001b3ULL;
        v >>= 8;
    }
    return h;
}

double zeta(std::uint64_t n, double theta) {
    double sum = 0;
    for (std::uint64_t i = 1; i <= n; ++i) sum += 1.0 / std::pow(static_cast<double>(i), theta);
    return sum;
}

}  // namespace

WorkloadSpec WorkloadSpec::named(std::string_view name) {
    WorkloadSpec s;
    s.name = std::string(name);
    if (name == "ycsb") {
        s.read_pct = 95;
        s.write_pct = 5;
    } else if (name == "ycsb-hc") {
        s.read_pct = 50;
        s.write_pct = 50;
    } else if (name == "ycsb-ro") {
        s.read_pct = 100;
        s.write_pct = 0;
    } else if (name == "transfer") {
        s.kind = WorkloadKind::TransferDeposit;
    } else if (name == "composite") {
        s.kind = WorkloadKind::Composite;
        s.keys = 3'000;
    } else {
        throw std::invalid_argument("unknown workload " + std::string(name));
    }
    return s;
}

void WorkloadSpec::validate() const {
    if (read_pct + write_pct != 100) throw std::invalid_argument("read_pct + write_pct must be 100");
    if (zipf_theta <= 0 || zipf_theta >= 1) throw std::invalid_argument("zipf_theta must be in (0, 1)");
    if (clients == 0) throw std::invalid_argument("need at least one client");
    if (kind == WorkloadKind::TransferDeposit && accounts < 2) throw std::invalid_argument("need two accounts");
    if (kind != WorkloadKind::TransferDeposit && keys == 0) throw std::invalid_argument("need keys");
    if (kind == WorkloadKind::Ycsb && ops_per_txn == 0) throw std::invalid_argument("need ops per txn");
    if (kind == WorkloadKind::Composite && kv_ops + row_ops + graph_ops == 0) {
        throw std::invalid_argument("need composite ops");
    }
    if (deposit_pct > 100) throw std::invalid_argument("deposit_pct above 100");
}

TableDescriptor WorkloadSpec::table() const {
    switch (kind) {
        case WorkloadKind::Ycsb:
            return {"usertable", "user", keys, kKeyWidth, value_bytes};
        case WorkloadKind::TransferDeposit:
            return {"account", "acct", accounts, kKeyWidth, 8};
        case WorkloadKind::Composite:
            // kv, row and graph keyspaces are consecutive index ranges.
            return {"composite", "c", keys * 3, kKeyWidth, value_bytes};
    }
    throw std::logic_error("bad workload kind");
}

std::string WorkloadSpec::initial_value(std::uint64_t index) const {
    if (kind == WorkloadKind::TransferDeposit) return std::to_string(initial_balance);
    std::string v = "v" + std::to_string(index);
    v.resize(value_bytes, '.');
    return v;
}

ZipfianGenerator::ZipfianGenerator(std::uint64_t items, double theta)
    : items_(items), theta_(theta), alpha_(1.0 / (1.0 - theta)), zetan_(zeta(items, theta)) {
    if (items == 0) throw std::invalid_argument("zipfian over zero items");
    double zeta2 = zeta(std::min<std::uint64_t>(2, items), theta);
    eta_ = (1 - std::pow(2.0 / static_cast<double>(items), 1 - theta)) / (1 - zeta2 / zetan_);
    half_pow_theta_ = 1 + std::pow(0.5, theta);
}

std::uint64_t ZipfianGenerator::next_rank(std::mt19937_64& rng) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double uz = u * zetan_;
    if (uz < 1.0) return 0;
    if (uz < half_pow_theta_) return std::min<std::uint64_t>(1, items_ - 1);
    auto r = static_cast<std::uint64_t>(static_cast<double>(items_) * std::pow(eta_ * u - eta_ + 1, alpha_));
    return std::min(r, items_ - 1);
}

std::uint64_t ZipfianGenerator::next(std::mt19937_64& rng) { return fnv1a(next_rank(rng)) % items_; }

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint32_t client) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), client, 0x7a5u};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::uint64_t zipf_items(const WorkloadSpec& spec) {
    switch (spec.kind) {
        case WorkloadKind::Ycsb:
        case WorkloadKind::Composite:
            return spec.keys;
        case WorkloadKind::TransferDeposit:
            return spec.accounts;
    }
    return 1;
}

}  // namespace

WorkloadGenerator::WorkloadGenerator(const WorkloadSpec& spec, std::uint32_t client)
    : spec_(spec), rng_(stream_seed(spec.seed, client)), zipf_(zipf_items(spec), spec.zipf_theta) {}

std::string WorkloadGenerator::value() {
    std::string v = "w" + std::to_string(counter_++) + ":" + std::to_string(rng_() % 1000000);
    v.resize(spec_.value_bytes, '.');
    return v;
}

std::uint64_t WorkloadGenerator::pick(std::uint64_t base) { return base + zipf_.next(rng_); }

TxnPlan WorkloadGenerator::next() {
    const auto table = spec_.table();
    TxnPlan plan;
    auto coin = [&](std::uint32_t pct) { return std::uniform_int_distribution<std::uint32_t>(0, 99)(rng_) < pct; };

    switch (spec_.kind) {
        case WorkloadKind::Ycsb: {
            for (std::uint32_t i = 0; i < spec_.ops_per_txn; ++i) {
                Op op;
                op.key = table.key(pick(0));
                if (coin(spec_.write_pct)) {
                    op.kind = Op::Kind::Write;
                    op.value = value();
                }
                plan.ops.push_back(std::move(op));
            }
            break;
        }
        case WorkloadKind::TransferDeposit: {
            std::int64_t amount = std::uniform_int_distribution<std::int64_t>(1, 100)(rng_);
            if (coin(spec_.deposit_pct)) {
                plan.type = TxnPlan::Type::Deposit;
                plan.ops.push_back({Op::Kind::Add, table.key(pick(0)), {}, amount, {}});
                plan.net_delta = amount;
            } else {
                plan.type = TxnPlan::Type::Transfer;
                auto from = pick(0);
                auto to = pick(0);
                while (to == from) to = std::uniform_int_distribution<std::uint64_t>(0, spec_.accounts - 1)(rng_);
                plan.ops.push_back({Op::Kind::Add, table.key(from), {}, -amount, {}});
                plan.ops.push_back({Op::Kind::Add, table.key(to), {}, amount, {}});
            }
            break;
        }
        case WorkloadKind::Composite: {
            plan.type = TxnPlan::Type::Composite;
            auto add = [&](const char* label, std::uint64_t base, std::uint32_t n) {
                for (std::uint32_t i = 0; i < n; ++i) {
                    Op op;
                    op.label = label;
                    op.key = table.key(pick(base));
                    if (coin(spec_.write_pct)) {
                        op.kind = Op::Kind::Write;
                        op.value = value();
                    }
                    plan.ops.push_back(std::move(op));
                }
            };
            add("kv", 0, spec_.kv_ops);
            add("row", spec_.keys, spec_.row_ops);
            add("graph", spec_.keys * 2, spec_.graph_ops);
            break;
        }
    }
    return plan;
}

std::string_view to_string(TxnPlan::Type t) {
    switch (t) {
        case TxnPlan::Type::Plain: return "plain";
        case TxnPlan::Type::Transfer: return "transfer";
        case TxnPlan::Type::Deposit: return "deposit";
        case TxnPlan::Type::Composite: return "composite";
    }
    return "?";
}

}  // namespace taas
