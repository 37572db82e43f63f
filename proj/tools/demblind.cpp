#include "demblind/cli.hpp"

int main(int argc, char** argv) { return demblind::cli::run(argc, argv); }
