#include "segrobust/cli.hpp"

int main(int argc, char** argv) { return segrobust::run_cli(argc, argv); }
