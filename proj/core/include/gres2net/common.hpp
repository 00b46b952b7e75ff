#ifndef GRES2NET_COMMON_HPP
#define GRES2NET_COMMON_HPP

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gres2net {

const char* version_string();

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/layer extents.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid or inconsistent configuration values.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input text (protocols, score files, config files).
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string format_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace gres2net

#define GRES_CHECK(cond, ...)                                             \
  do {                                                                    \
    if (!(cond)) throw ::gres2net::Error(::gres2net::format_msg(__VA_ARGS__)); \
  } while (0)

#define GRES_CHECK_SHAPE(cond, ...)                                            \
  do {                                                                         \
    if (!(cond)) throw ::gres2net::ShapeError(::gres2net::format_msg(__VA_ARGS__)); \
  } while (0)

#define GRES_CHECK_CONFIG(cond, ...)                                            \
  do {                                                                          \
    if (!(cond)) throw ::gres2net::ConfigError(::gres2net::format_msg(__VA_ARGS__)); \
  } while (0)

#endif  // GRES2NET_COMMON_HPP
