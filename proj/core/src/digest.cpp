#include "diffcal/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "diffcal/errors.hpp"
#include "diffcal/fsio.hpp"

namespace diffcal {

namespace {

std::string to_hex(const unsigned char* bytes, unsigned len) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = digits[bytes[i] >> 4];
    out[2 * i + 1] = digits[bytes[i] & 0xf];
  }
  return out;
}

}  // namespace

std::string sha256_hex(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned len = 0;
  if (!EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(),
                  nullptr)) {
    throw Error("sha256 digest failed");
  }
  return to_hex(md.data(), len);
}

std::string sha256_file(const std::string& path) {
  return sha256_hex(read_file(path));
}

}  // namespace diffcal
