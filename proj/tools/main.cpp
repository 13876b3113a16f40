#include "evpupil/cli.hpp"

int main(int argc, char** argv) { return evpupil::cli::run(argc, argv); }
