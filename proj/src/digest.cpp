#include "taas/digest.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace taas {

struct Sha256::Impl {
    EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_MD_CTX_new();
    if (impl_->ctx == nullptr || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 init failed");
    }
}

Sha256::~Sha256() {
    if (impl_ && impl_->ctx) EVP_MD_CTX_free(impl_->ctx);
}

Sha256::Sha256(Sha256&&) noexcept = default;
Sha256& Sha256::operator=(Sha256&&) noexcept = default;

Sha256& Sha256::update(ByteView data) {
    EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
    return *this;
}

Sha256& Sha256::update(std::string_view s) {
    EVP_DigestUpdate(impl_->ctx, s.data(), s.size());
    return *this;
}

Digest Sha256::finish() {
    Digest out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(impl_->ctx, out.data(), &len);
    EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr);
    return out;
}

Digest Sha256::of(ByteView data) {
    Sha256 h;
    h.update(data);
    return h.finish();
}

std::string to_hex(ByteView b) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (auto c : b) {
        s.push_back(kHex[c >> 4]);
        s.push_back(kHex[c & 0xf]);
    }
    return s;
}

std::string to_hex(const Digest& d) { return to_hex(ByteView(d.data(), d.size())); }

}  // namespace taas
