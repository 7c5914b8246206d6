#include "ento/cli.hpp"

int main(int argc, char** argv) { return ento::run_cli(argc, argv); }
