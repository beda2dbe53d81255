#include "hdae_cli/cli.hpp"

int main(int argc, char** argv) { return hdae::cli::run(argc, argv); }
