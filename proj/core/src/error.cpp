#include "d3ood/error.hpp"

namespace d3ood {

int exit_code(ErrorKind kind) noexcept { return static_cast<int>(kind); }

}  // namespace d3ood
