#include "tvae/cli.hpp"

int main(int argc, char** argv) { return tvae::cli::run(argc, argv); }
