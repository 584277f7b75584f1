#include "ohz/cli.hpp"

int main(int argc, char** argv) { return ohz::cli::run(argc, argv); }
