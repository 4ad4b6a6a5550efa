#include "commands.hpp"

int main(int argc, char** argv) { return fastbss::cli::run_cli(argc, argv); }
