#include "angle/cli.hpp"

int main(int argc, char** argv) { return angle::run_cli(argc, argv); }
