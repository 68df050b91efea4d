#include "cli.hpp"

int main(int argc, char** argv) { return mbatf::cli::run(argc, argv); }
