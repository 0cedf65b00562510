#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

#include "damo/parameter.hpp"

namespace damo {

/// Incremental SHA-256 (OpenSSL EVP).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  /// Lowercase hex digest. The object cannot be updated afterwards.
  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(const void* data, std::size_t size);

/// Little-endian float64 serialization of a tensor's data.
std::string tensor_bytes(const Tensor& t);

/// Digest over the name, shape and value bytes of every parameter in the
/// group, in store order.
std::string group_hash(const ParameterStore& store, const std::string& group);

}  // namespace damo
