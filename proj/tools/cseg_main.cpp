#include "cseg/cli.hpp"

int main(int argc, char** argv) { return cseg::run_cli(argc, argv); }
