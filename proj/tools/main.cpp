#include "fire/cli.hpp"

int main(int argc, char** argv) { return fire::run_cli(argc, argv); }
