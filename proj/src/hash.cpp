#include "damo/hash.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <stdexcept>

namespace damo {

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
  bool finished = false;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_MD_CTX_new();
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 initialisation failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(impl_->ctx); }

void Sha256::update(const void* data, std::size_t size) {
  if (impl_->finished) throw std::logic_error("Sha256::update after hex()");
  if (EVP_DigestUpdate(impl_->ctx, data, size) != 1) throw std::runtime_error("SHA-256 update failed");
}

std::string Sha256::hex() {
  if (impl_->finished) throw std::logic_error("Sha256::hex called twice");
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(impl_->ctx, md, &len) != 1) throw std::runtime_error("SHA-256 finalisation failed");
  impl_->finished = true;
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += digits[md[i] >> 4];
    out += digits[md[i] & 15];
  }
  return out;
}

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string tensor_bytes(const Tensor& t) {
  std::string out(t.size() * 8, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(t[i]);
    for (std::size_t b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

std::string group_hash(const ParameterStore& store, const std::string& group) {
  Sha256 h;
  for (const auto& p : store.all()) {
    if (p.group != group) continue;
    h.update(p.name);
    h.update("\0", 1);
    h.update(shape_str(p.value.shape()));
    h.update(tensor_bytes(p.value));
  }
  return h.hex();
}

}  // namespace damo
