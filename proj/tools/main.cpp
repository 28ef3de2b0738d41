#include "hoitag/cli.hpp"

int main(int argc, char** argv) { return hoitag::run_cli(argc, argv); }
