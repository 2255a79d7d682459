#include "cli.hpp"

int main(int argc, char** argv) { return d3ood::cli::run(argc, argv); }
