#pragma once

// Deterministic discrete-event simulator for actors. Virtual time, a seeded
// RNG for link delays and faults, and a single event queue ordered by
// (time, insertion sequence). Given the same seed, actors and scripted
// events, every run processes the same events in the same order; the trace
// hash makes that checkable.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "taas/digest.hpp"
#include "taas/runtime.hpp"

namespace taas {

struct LinkModel {
    Micros base_delay = 100;
    Micros jitter = 0;          // uniform extra delay in [0, jitter]
    double drop_rate = 0.0;
    double dup_rate = 0.0;
};

struct SimStats {
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
    std::uint64_t duplicated = 0;
    std::uint64_t peer_messages = 0;  // taas node to taas node
    std::uint64_t bytes = 0;
    std::uint64_t events = 0;
};

class SimWorld {
  public:
    using Factory = std::function<std::unique_ptr<Actor>()>;

    explicit SimWorld(std::uint64_t seed);
    ~SimWorld();
    SimWorld(const SimWorld&) = delete;
    SimWorld& operator=(const SimWorld&) = delete;

    // Registers an actor and schedules its on_start at the current time.
    void add(EndpointId id, Factory factory);

    // Crash: the actor is destroyed, its queued work and timers vanish and
    // messages addressed to it are dropped until restart.
    void kill(EndpointId id);
    // New incarnation from the factory, started at the current time.
    void restart(EndpointId id);
    bool alive(EndpointId id) const;

    // Live actor instance, or nullptr while down.
    Actor* actor(EndpointId id);
    template <class T>
    T* actor_as(EndpointId id) {
        return dynamic_cast<T*>(actor(id));
    }

    void set_default_link(LinkModel m) { default_link_ = m; }
    void set_link(EndpointId from, EndpointId to, LinkModel m);
    // Blocks both directions until heal().
    void partition(EndpointId a, EndpointId b);
    void heal(EndpointId a, EndpointId b);
    // Cuts or restores every link of `id`.
    void isolate(EndpointId id);
    void rejoin(EndpointId id);
    bool blocked(EndpointId from, EndpointId to) const;

    // Runs `fn` at virtual time `at` (or now if in the past).
    void at(Micros when, std::function<void()> fn);

    Micros now() const { return now_; }
    // Processes events with time <= `until`; returns false if the queue
    // drained first.
    bool run_until(Micros until);
    // Processes until `pred` holds (checked after every event) or `deadline`.
    bool run_until(const std::function<bool()>& pred, Micros deadline);

    Digest trace_hash();
    const SimStats& stats() const { return stats_; }
    std::mt19937_64& rng() { return rng_; }

  private:
    class Rt;
    struct Slot;
    struct Event {
        Micros time;
        std::uint64_t seq;
        enum class Kind { Start, Deliver, Timer, Run, Call } kind;
        EndpointId target = 0;
        EndpointId from = 0;
        std::uint64_t incarnation = 0;
        std::shared_ptr<const Bytes> payload;
        std::function<void()> call;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    void push(Event e);
    void step(Event e);
    void enqueue_work(Slot& s, Micros at);
    void run_actor(Slot& s);
    void route(EndpointId from, EndpointId to, Bytes msg, Micros depart);
    const LinkModel& link(EndpointId from, EndpointId to) const;
    void trace(const Event& e);

    std::mt19937_64 rng_;
    Micros now_ = 0;
    std::uint64_t seq_ = 0;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::map<EndpointId, std::unique_ptr<Slot>> slots_;
    LinkModel default_link_;
    std::map<std::pair<EndpointId, EndpointId>, LinkModel> links_;
    std::set<std::pair<EndpointId, EndpointId>> cut_;
    std::set<EndpointId> isolated_;
    Sha256 trace_;
    SimStats stats_;
};

}  // namespace taas
