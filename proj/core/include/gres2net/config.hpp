#ifndef GRES2NET_CONFIG_HPP
#define GRES2NET_CONFIG_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gres2net/common.hpp"

namespace gres2net {

// key=value text, one pair per line, '#' starts a comment. Order preserved.
using KvPairs = std::vector<std::pair<std::string, std::string>>;

KvPairs parse_kv_text(const std::string& text);
KvPairs parse_kv_file(const std::string& path);

std::string kv_get(const KvPairs& kv, const std::string& key,
                   const std::string& fallback);
bool kv_has(const KvPairs& kv, const std::string& key);

int64_t parse_int(const std::string& s, const std::string& what);
double parse_double(const std::string& s, const std::string& what);
bool parse_bool(const std::string& s, const std::string& what);

}  // namespace gres2net

#endif  // GRES2NET_CONFIG_HPP
