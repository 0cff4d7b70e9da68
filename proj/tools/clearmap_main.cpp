#include "clearmap/cli.hpp"

int main(int argc, char** argv) { return clearmap::cli::run(argc, argv); }
