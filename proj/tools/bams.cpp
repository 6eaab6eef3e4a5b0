#include "bams/cli.hpp"

int main(int argc, char** argv) { return bams::cli::run(argc, argv); }
