#include "gres2net/common.hpp"

namespace gres2net {

const char* version_string() { return "0.1.0"; }

}  // namespace gres2net
