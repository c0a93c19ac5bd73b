#include "amt/cli.hpp"

int main(int argc, char** argv) { return amt::cli::cli_main(argc, argv); }
