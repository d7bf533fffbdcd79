#include "deskagent/cli/cli.hpp"

int main(int argc, char** argv) { return deskagent::cli::run_cli(argc, argv); }
