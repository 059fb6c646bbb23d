#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tvmerge::cli {

// Runs one tvmerge invocation (args exclude the program name). Returns 0 on
// success, 2 on usage/validation errors, 3 on I/O or format errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tvmerge::cli
