#pragma once

#include <string>
#include <vector>

namespace vle::cli {

// Runs one subcommand (args exclude the program name) and returns the
// process exit code. Errors print to stderr; nothing partial is left on disk.
int run(const std::vector<std::string>& args);

int main(int argc, char** argv);

}  // namespace vle::cli
