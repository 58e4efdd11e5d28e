#include "handfit/cli.hpp"

int main(int argc, char** argv) { return handfit::run_cli(argc, argv); }
