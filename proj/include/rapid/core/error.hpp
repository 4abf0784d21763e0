#pragma once

#include <stdexcept>
#include <string>

namespace rapid {

/// Exception carrying a stable machine-readable code (e.g. "E_SHAPE") next to
/// the human message. The CLI prints both on one line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

namespace errc {
inline constexpr const char* kShape = "E_SHAPE";
inline constexpr const char* kNonFinite = "E_NON_FINITE";
inline constexpr const char* kDomain = "E_DOMAIN";
inline constexpr const char* kFormat = "E_FORMAT";
inline constexpr const char* kIo = "E_IO";
inline constexpr const char* kConfig = "E_CONFIG";
inline constexpr const char* kHashMismatch = "E_HASH_MISMATCH";
inline constexpr const char* kMissingArtifact = "E_MISSING_ARTIFACT";
}  // namespace errc

inline void require(bool ok, const char* code, const std::string& message) {
  if (!ok) throw Error(code, message);
}

}  // namespace rapid
