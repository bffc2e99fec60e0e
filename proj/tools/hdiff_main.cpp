#include "hdiff/cli.hpp"

int main(int argc, char** argv) { return hdiff::cli::run_cli(argc, argv); }
