#include "vle/cli.hpp"

int main(int argc, char** argv) { return vle::cli::main(argc, argv); }
