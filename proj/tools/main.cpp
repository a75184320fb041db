#include "cnode/cli/run.hpp"

int main(int argc, char** argv) { return cnode::cli::run(argc, argv); }
