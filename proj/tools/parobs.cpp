#include "parobs/cli.hpp"

int main(int argc, char** argv) { return parobs::run_cli(argc, argv); }
