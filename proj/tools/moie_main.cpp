#include "moie/cli.hpp"

int main(int argc, char** argv) { return moie::cli::run(argc, argv); }
