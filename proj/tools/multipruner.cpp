#include "multipruner/cli.hpp"

int main(int argc, char** argv) { return multipruner::run_cli(argc, argv); }
