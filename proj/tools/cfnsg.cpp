#include "cfnsg/cli.hpp"

int main(int argc, char** argv) { return cfnsg::run_cli(argc, argv); }
