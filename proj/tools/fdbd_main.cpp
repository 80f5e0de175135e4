#include "fdbd/cli.hpp"

int main(int argc, char** argv) { return fdbd::cli::run(argc, argv); }
