#include <gtest/gtest.h>

#include <cmath>

#include "taas/workload.hpp"

using namespace taas;

TEST(WorkloadSpec, NamedMixes) {
    auto y = WorkloadSpec::named("ycsb");
    EXPECT_EQ(y.read_pct, 95u);
    EXPECT_EQ(WorkloadSpec::named("ycsb-hc").write_pct, 50u);
    EXPECT_EQ(WorkloadSpec::named("ycsb-ro").write_pct, 0u);
    EXPECT_EQ(WorkloadSpec::named("transfer").kind, WorkloadKind::TransferDeposit);
    EXPECT_EQ(WorkloadSpec::named("composite").kind, WorkloadKind::Composite);
    EXPECT_THROW(WorkloadSpec::named("tpcc"), std::invalid_argument);
}

TEST(WorkloadSpec, Validation) {
    auto s = WorkloadSpec::named("ycsb");
    EXPECT_NO_THROW(s.validate());
    s.read_pct = 90;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = WorkloadSpec::named("ycsb");
    s.zipf_theta = 1.0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = WorkloadSpec::named("transfer");
    s.accounts = 1;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(WorkloadSpec, TablesAndInitialValues) {
    auto t = WorkloadSpec::named("transfer");
    EXPECT_EQ(t.table().keys, t.accounts);
    EXPECT_EQ(t.initial_value(3), std::to_string(t.initial_balance));
    auto c = WorkloadSpec::named("composite");
    EXPECT_EQ(c.table().keys, c.keys * 3);
    auto y = WorkloadSpec::named("ycsb");
    EXPECT_EQ(y.initial_value(5).size(), y.value_bytes);
}

namespace {

double zeta(std::uint64_t n, double theta) {
    double z = 0;
    for (std::uint64_t i = 1; i <= n; ++i) z += 1.0 / std::pow(static_cast<double>(i), theta);
    return z;
}

}  // namespace

TEST(Zipfian, HeadProbabilitiesMatchClosedForm) {
    const std::uint64_t n = 1000;
    const double theta = 0.99;
    ZipfianGenerator z(n, theta);
    std::mt19937_64 rng(9);
    const int samples = 200'000;
    int r0 = 0, r1 = 0;
    for (int i = 0; i < samples; ++i) {
        auto r = z.next_rank(rng);
        ASSERT_LT(r, n);
        r0 += r == 0;
        r1 += r == 1;
    }
    double zn = zeta(n, theta);
    EXPECT_NEAR(r0 / double(samples), 1.0 / zn, 0.01);
    EXPECT_NEAR(r1 / double(samples), std::pow(0.5, theta) / zn, 0.01);
}

TEST(Zipfian, ScrambledStaysInRange) {
    ZipfianGenerator z(37, 0.5);
    std::mt19937_64 rng(1);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 20'000; ++i) {
        auto v = z.next(rng);
        ASSERT_LT(v, 37u);
        seen.insert(v);
    }
    // hashing ranks mod n collides, so not every item is reachable
    EXPECT_GT(seen.size(), 15u);
}

TEST(Generator, StreamsArePureFunctionsOfSpecAndClient) {
    auto spec = WorkloadSpec::named("ycsb-hc");
    WorkloadGenerator a(spec, 3), b(spec, 3), c(spec, 4);
    bool differs = false;
    for (int i = 0; i < 50; ++i) {
        auto pa = a.next();
        auto pb = b.next();
        auto pc = c.next();
        ASSERT_EQ(pa.ops.size(), pb.ops.size());
        for (std::size_t j = 0; j < pa.ops.size(); ++j) {
            EXPECT_EQ(pa.ops[j].key, pb.ops[j].key);
            EXPECT_EQ(pa.ops[j].value, pb.ops[j].value);
        }
        differs = differs || pa.ops[0].key != pc.ops[0].key;
    }
    EXPECT_TRUE(differs);
}

TEST(Generator, YcsbMixRoughlyHolds) {
    auto spec = WorkloadSpec::named("ycsb");
    WorkloadGenerator g(spec, 0);
    int writes = 0, ops = 0;
    for (int i = 0; i < 2000; ++i) {
        for (const auto& op : g.next().ops) {
            ++ops;
            writes += op.kind == Op::Kind::Write;
            EXPECT_EQ(op.key.rfind("user", 0), 0u);
        }
    }
    EXPECT_EQ(ops, 2000 * static_cast<int>(spec.ops_per_txn));
    EXPECT_NEAR(writes / double(ops), 0.05, 0.01);
}

TEST(Generator, TransfersBalanceDepositsAdd) {
    auto spec = WorkloadSpec::named("transfer");
    WorkloadGenerator g(spec, 1);
    int deposits = 0;
    for (int i = 0; i < 1000; ++i) {
        auto p = g.next();
        std::int64_t sum = 0;
        for (const auto& op : p.ops) {
            EXPECT_EQ(op.kind, Op::Kind::Add);
            sum += op.delta;
        }
        EXPECT_EQ(sum, p.net_delta);
        if (p.type == TxnPlan::Type::Transfer) {
            ASSERT_EQ(p.ops.size(), 2u);
            EXPECT_NE(p.ops[0].key, p.ops[1].key);
            EXPECT_EQ(p.net_delta, 0);
        } else {
            ++deposits;
            EXPECT_GT(p.net_delta, 0);
        }
    }
    EXPECT_NEAR(deposits / 1000.0, spec.deposit_pct / 100.0, 0.05);
}

TEST(Generator, CompositeKeyspacesDisjoint) {
    auto spec = WorkloadSpec::named("composite");
    WorkloadGenerator g(spec, 2);
    auto table = spec.table();
    for (int i = 0; i < 200; ++i) {
        auto p = g.next();
        EXPECT_EQ(p.ops.size(), spec.kv_ops + spec.row_ops + spec.graph_ops);
        for (const auto& op : p.ops) {
            std::uint64_t base = op.label == "kv" ? 0 : op.label == "row" ? spec.keys : spec.keys * 2;
            EXPECT_GE(op.key, table.key(base));
            EXPECT_LT(op.key, table.key(base + spec.keys));
        }
    }
}
