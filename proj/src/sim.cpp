#include "taas/sim.hpp"

#include <stdexcept>

namespace taas {

struct SimWorld::Slot {
    EndpointId id = 0;
    Factory factory;
    std::unique_ptr<Actor> actor;
    std::uint64_t incarnation = 0;
    Micros busy_until = 0;
    bool run_scheduled = false;
    bool timer_queued = false;
    std::set<Micros> timers;

    struct Item {
        enum class Kind { Start, Message, Timer } kind;
        EndpointId from = 0;
        std::shared_ptr<const Bytes> payload;
    };
    std::deque<Item> inbox;
};

class SimWorld::Rt final : public Runtime {
  public:
    Rt(SimWorld& w, Slot& s, Micros start) : w_(w), s_(s), start_(start) {}

    EndpointId self() const override { return s_.id; }
    Micros now() const override { return start_ + charged_; }
    void send(EndpointId to, Bytes message) override { out_.push_back({to, std::move(message), now()}); }
    void wake_at(Micros at) override {
        if (at < now()) at = now();
        if (!s_.timers.insert(at).second) return;
        Event e{};
        e.time = at;
        e.kind = Event::Kind::Timer;
        e.target = s_.id;
        e.incarnation = s_.incarnation;
        w_.push(std::move(e));
    }
    void charge(Micros cost) override {
        if (cost > 0) charged_ += cost;
    }

    Micros end() const { return start_ + charged_; }

    struct Out {
        EndpointId to;
        Bytes msg;
        Micros at;
    };
    std::vector<Out> out_;

  private:
    SimWorld& w_;
    Slot& s_;
    Micros start_;
    Micros charged_ = 0;
};

SimWorld::SimWorld(std::uint64_t seed) : rng_(seed) {}
SimWorld::~SimWorld() = default;

void SimWorld::push(Event e) {
    e.seq = seq_++;
    queue_.push(std::move(e));
}

void SimWorld::add(EndpointId id, Factory factory) {
    if (slots_.contains(id)) throw std::invalid_argument("duplicate endpoint " + std::to_string(id));
    auto s = std::make_unique<Slot>();
    s->id = id;
    s->factory = std::move(factory);
    slots_.emplace(id, std::move(s));
    restart(id);
}

void SimWorld::kill(EndpointId id) {
    auto& s = *slots_.at(id);
    s.actor.reset();
    s.inbox.clear();
    s.timers.clear();
    s.timer_queued = false;
    s.run_scheduled = false;
    s.busy_until = now_;
    ++s.incarnation;
}

void SimWorld::restart(EndpointId id) {
    auto& s = *slots_.at(id);
    if (s.actor) kill(id);
    ++s.incarnation;
    s.actor = s.factory();
    s.busy_until = now_;
    Event e{};
    e.time = now_;
    e.kind = Event::Kind::Start;
    e.target = id;
    e.incarnation = s.incarnation;
    push(std::move(e));
}

bool SimWorld::alive(EndpointId id) const {
    auto it = slots_.find(id);
    return it != slots_.end() && it->second->actor != nullptr;
}

Actor* SimWorld::actor(EndpointId id) {
    auto it = slots_.find(id);
    return it == slots_.end() ? nullptr : it->second->actor.get();
}

void SimWorld::set_link(EndpointId from, EndpointId to, LinkModel m) { links_[{from, to}] = m; }

void SimWorld::partition(EndpointId a, EndpointId b) {
    cut_.insert({a, b});
    cut_.insert({b, a});
}

void SimWorld::heal(EndpointId a, EndpointId b) {
    cut_.erase({a, b});
    cut_.erase({b, a});
}

void SimWorld::isolate(EndpointId id) { isolated_.insert(id); }
void SimWorld::rejoin(EndpointId id) { isolated_.erase(id); }

bool SimWorld::blocked(EndpointId from, EndpointId to) const {
    if (from == to) return false;
    return cut_.contains({from, to}) || isolated_.contains(from) || isolated_.contains(to);
}

void SimWorld::at(Micros when, std::function<void()> fn) {
    Event e{};
    e.time = std::max(when, now_);
    e.kind = Event::Kind::Call;
    e.call = std::move(fn);
    push(std::move(e));
}

const LinkModel& SimWorld::link(EndpointId from, EndpointId to) const {
    auto it = links_.find({from, to});
    return it == links_.end() ? default_link_ : it->second;
}

void SimWorld::route(EndpointId from, EndpointId to, Bytes msg, Micros depart) {
    stats_.bytes += msg.size();
    if (is_taas_endpoint(from) && is_taas_endpoint(to) && from != to) ++stats_.peer_messages;
    const auto& m = link(from, to);
    auto roll = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); };
    auto delay = [&] {
        Micros d = m.base_delay;
        if (m.jitter > 0) d += std::uniform_int_distribution<Micros>(0, m.jitter)(rng_);
        return d;
    };
    if (m.drop_rate > 0 && roll() < m.drop_rate) {
        ++stats_.dropped;
        return;
    }
    auto payload = std::make_shared<const Bytes>(std::move(msg));
    int copies = 1;
    if (m.dup_rate > 0 && roll() < m.dup_rate) {
        copies = 2;
        ++stats_.duplicated;
    }
    for (int i = 0; i < copies; ++i) {
        Event e{};
        e.time = depart + delay();
        e.kind = Event::Kind::Deliver;
        e.target = to;
        e.from = from;
        e.payload = payload;
        push(std::move(e));
    }
}

void SimWorld::enqueue_work(Slot& s, Micros at) {
    if (s.run_scheduled) return;
    s.run_scheduled = true;
    Event e{};
    e.time = std::max(at, s.busy_until);
    e.kind = Event::Kind::Run;
    e.target = s.id;
    e.incarnation = s.incarnation;
    push(std::move(e));
}

void SimWorld::run_actor(Slot& s) {
    s.run_scheduled = false;
    if (!s.actor || s.inbox.empty()) return;
    auto item = std::move(s.inbox.front());
    s.inbox.pop_front();

    Rt rt(*this, s, now_);
    switch (item.kind) {
        case Slot::Item::Kind::Start:
            s.actor->on_start(rt);
            break;
        case Slot::Item::Kind::Message:
            s.actor->on_message(rt, item.from, *item.payload);
            break;
        case Slot::Item::Kind::Timer:
            s.timer_queued = false;
            s.actor->on_timer(rt);
            break;
    }
    s.busy_until = rt.end();
    for (auto& o : rt.out_) route(s.id, o.to, std::move(o.msg), o.at);
    if (!s.inbox.empty()) enqueue_work(s, s.busy_until);
}

void SimWorld::trace(const Event& e) {
    ByteWriter w;
    w.u64(static_cast<std::uint64_t>(e.time));
    w.u8(static_cast<std::uint8_t>(e.kind));
    w.u32(e.target);
    w.u32(e.from);
    trace_.update(w.bytes());
    if (e.payload) trace_.update(*e.payload);
}

void SimWorld::step(Event e) {
    now_ = e.time;
    ++stats_.events;
    if (e.kind == Event::Kind::Call) {
        trace(e);
        e.call();
        return;
    }
    auto it = slots_.find(e.target);
    if (it == slots_.end()) {
        ++stats_.dropped;
        return;
    }
    auto& s = *it->second;
    switch (e.kind) {
        case Event::Kind::Start:
            if (e.incarnation != s.incarnation || !s.actor) return;
            trace(e);
            s.inbox.push_front({Slot::Item::Kind::Start, 0, nullptr});
            enqueue_work(s, now_);
            break;
        case Event::Kind::Deliver:
            if (!s.actor || blocked(e.from, e.target)) {
                ++stats_.dropped;
                return;
            }
            trace(e);
            ++stats_.delivered;
            s.inbox.push_back({Slot::Item::Kind::Message, e.from, e.payload});
            enqueue_work(s, now_);
            break;
        case Event::Kind::Timer:
            if (e.incarnation != s.incarnation || !s.actor) return;
            s.timers.erase(e.time);
            if (s.timer_queued) return;
            trace(e);
            s.timer_queued = true;
            s.inbox.push_back({Slot::Item::Kind::Timer, 0, nullptr});
            enqueue_work(s, now_);
            break;
        case Event::Kind::Run:
            if (e.incarnation != s.incarnation) return;
            run_actor(s);
            break;
        case Event::Kind::Call:
            break;
    }
}

bool SimWorld::run_until(Micros until) {
    while (!queue_.empty()) {
        if (queue_.top().time > until) {
            now_ = until;
            return true;
        }
        Event e = queue_.top();
        queue_.pop();
        step(std::move(e));
    }
    now_ = std::max(now_, until);
    return false;
}

bool SimWorld::run_until(const std::function<bool()>& pred, Micros deadline) {
    if (pred()) return true;
    while (!queue_.empty() && queue_.top().time <= deadline) {
        Event e = queue_.top();
        queue_.pop();
        step(std::move(e));
        if (pred()) return true;
    }
    return pred();
}

Digest SimWorld::trace_hash() {
    Sha256 copy;
    // Sha256 is move-only; finishing a fresh hasher over the running digest
    // keeps the trace open for further events.
    Digest mid = std::move(trace_).finish();
    trace_ = Sha256();
    trace_.update(ByteView(mid.data(), mid.size()));
    copy.update(ByteView(mid.data(), mid.size()));
    return copy.finish();
}

}  // namespace taas
