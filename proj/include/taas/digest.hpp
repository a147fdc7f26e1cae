#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "taas/bytes.hpp"

namespace taas {

using Digest = std::array<std::uint8_t, 32>;

/// Incremental SHA-256.
class Sha256 {
  public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    Sha256(Sha256&&) noexcept;
    Sha256& operator=(Sha256&&) noexcept;

    Sha256& update(ByteView data);
    Sha256& update(std::string_view s);
    Digest finish();

    static Digest of(ByteView data);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string to_hex(const Digest& d);
std::string to_hex(ByteView b);

}  // namespace taas
