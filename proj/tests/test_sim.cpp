#include <gtest/gtest.h>

#include "taas/sim.hpp"

using namespace taas;

namespace {

// Bounces a counter back and forth; records when things happened.
class Pinger final : public Actor {
  public:
    Pinger(EndpointId peer, bool starts, std::vector<std::pair<Micros, int>>* log) : peer_(peer), starts_(starts), log_(log) {}

    void on_start(Runtime& rt) override {
        if (starts_) rt.send(peer_, Bytes{0});
        rt.wake_at(rt.now() + 1000);
    }
    void on_message(Runtime& rt, EndpointId, ByteView m) override {
        log_->push_back({rt.now(), m[0]});
        rt.charge(50);
        if (m[0] < 200) rt.send(peer_, Bytes{static_cast<std::uint8_t>(m[0] + 1)});
    }
    void on_timer(Runtime& rt) override {
        log_->push_back({rt.now(), -1});
        ++timers;
        if (timers < 5) rt.wake_at(rt.now() + 1000);
    }
    int timers = 0;

  private:
    EndpointId peer_;
    bool starts_;
    std::vector<std::pair<Micros, int>>* log_;
};

struct Run {
    std::vector<std::pair<Micros, int>> a, b;
    Digest trace;
    SimStats stats;
};

Run run(std::uint64_t seed, LinkModel link) {
    Run r;
    SimWorld w(seed);
    w.set_default_link(link);
    w.add(1, [&] { return std::make_unique<Pinger>(2, true, &r.a); });
    w.add(2, [&] { return std::make_unique<Pinger>(1, false, &r.b); });
    w.run_until(1'000'000);
    r.trace = w.trace_hash();
    r.stats = w.stats();
    return r;
}

}  // namespace

TEST(Sim, SameSeedSameTrace) {
    LinkModel lossy{100, 80, 0.1, 0.05};
    auto x = run(42, lossy);
    auto y = run(42, lossy);
    EXPECT_EQ(x.trace, y.trace);
    EXPECT_EQ(x.a, y.a);
    EXPECT_EQ(x.b, y.b);
    auto z = run(43, lossy);
    EXPECT_NE(x.trace, z.trace);
}

TEST(Sim, DelaysAndCpuCharges) {
    auto r = run(1, LinkModel{100, 0, 0, 0});
    ASSERT_GE(r.b.size(), 2u);
    // First delivery after one link delay; replies leave after the 50 us charge.
    auto first_msg = std::find_if(r.b.begin(), r.b.end(), [](auto& e) { return e.second >= 0; });
    EXPECT_EQ(first_msg->first, 100);
    auto second = std::find_if(r.a.begin(), r.a.end(), [](auto& e) { return e.second == 1; });
    ASSERT_NE(second, r.a.end());
    EXPECT_EQ(second->first, 100 + 50 + 100);
}

TEST(Sim, DropAndDuplicateCounted) {
    auto r = run(5, LinkModel{100, 0, 0.3, 0.0});
    EXPECT_GT(r.stats.dropped, 0u);
    auto d = run(5, LinkModel{100, 0, 0.0, 0.5});
    EXPECT_GT(d.stats.duplicated, 0u);
}

TEST(Sim, KillDropsStateAndRestartStartsFresh) {
    std::vector<std::pair<Micros, int>> a, b;
    SimWorld w(1);
    int incarnations = 0;
    w.add(1, [&] { return std::make_unique<Pinger>(2, false, &a); });
    w.add(2, [&] {
        ++incarnations;
        return std::make_unique<Pinger>(1, false, &b);
    });
    w.run_until(2500);
    EXPECT_EQ(w.actor_as<Pinger>(2)->timers, 2);
    w.kill(2);
    EXPECT_FALSE(w.alive(2));
    EXPECT_EQ(w.actor(2), nullptr);
    auto before = b.size();
    w.run_until(10'000);
    EXPECT_EQ(b.size(), before);  // its timers died with it
    w.restart(2);
    w.run_until(20'000);
    EXPECT_EQ(incarnations, 2);
    EXPECT_EQ(w.actor_as<Pinger>(2)->timers, 5);
}

TEST(Sim, PartitionBlocksUntilHeal) {
    std::vector<std::pair<Micros, int>> a, b;
    SimWorld w(1);
    w.add(1, [&] { return std::make_unique<Pinger>(2, true, &a); });
    w.add(2, [&] { return std::make_unique<Pinger>(1, false, &b); });
    w.partition(1, 2);
    EXPECT_TRUE(w.blocked(1, 2));
    EXPECT_TRUE(w.blocked(2, 1));
    w.run_until(50'000);
    auto msgs = std::count_if(b.begin(), b.end(), [](auto& e) { return e.second >= 0; });
    EXPECT_EQ(msgs, 0);
    w.heal(1, 2);
    EXPECT_FALSE(w.blocked(1, 2));
    w.isolate(2);
    EXPECT_TRUE(w.blocked(1, 2));
    w.rejoin(2);
    EXPECT_FALSE(w.blocked(1, 2));
}

TEST(Sim, ScheduledCallsAndPredicates) {
    SimWorld w(1);
    std::vector<Micros> seen;
    w.at(300, [&] { seen.push_back(w.now()); });
    w.at(100, [&] { seen.push_back(w.now()); });
    EXPECT_TRUE(w.run_until([&] { return seen.size() == 2; }, 1000));
    EXPECT_EQ(seen, (std::vector<Micros>{100, 300}));
    EXPECT_FALSE(w.run_until([] { return false; }, 2000));
    EXPECT_LE(w.now(), 2000);
}
