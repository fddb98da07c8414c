#include "drsync/cli.hpp"

int main(int argc, char** argv) { return drsync::cli::main(argc, argv); }
