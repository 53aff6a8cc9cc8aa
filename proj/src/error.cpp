#include "hgp/error.hpp"

namespace hgp {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : UserError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

LevelExhaustedError::LevelExhaustedError(int level_reached, int requested)
    : UserError("coarsening reached a single node after level " + std::to_string(level_reached) +
                " of " + std::to_string(requested) + " requested levels"),
      level_reached_(level_reached) {}

}  // namespace hgp
