#include "expert/hashing.hpp"

#include <array>
#include <cstdio>

#include <openssl/evp.h>

namespace expert {

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string field_hash(std::initializer_list<std::string_view> fields) {
  std::string buf;
  for (auto f : fields) {
    buf += std::to_string(f.size());
    buf.push_back(':');
    buf.append(f);
  }
  return sha256_hex(buf);
}

}  // namespace expert
