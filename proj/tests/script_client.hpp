#pragma once

// Actor wrapper around ClientCore that runs a test-provided script.

#include <functional>
#include <utility>

#include "taas/exec_client.hpp"

namespace taas::testing {

class ScriptClient final : public Actor {
  public:
    using Script = std::function<void(Runtime&, ClientCore&)>;

    ScriptClient(ClientOptions opts, Script script) : core(std::move(opts)), script_(std::move(script)) {}

    void on_start(Runtime& rt) override {
        core.start(rt);
        if (script_) script_(rt, core);
        arm(rt);
    }
    void on_message(Runtime& rt, EndpointId from, ByteView message) override {
        core.on_message(rt, from, message);
        arm(rt);
    }
    void on_timer(Runtime& rt) override {
        core.on_timer(rt);
        arm(rt);
    }

    ClientCore core;

  private:
    void arm(Runtime& rt) {
        if (auto d = core.next_deadline()) rt.wake_at(*d);
    }
    Script script_;
};

}  // namespace taas::testing
