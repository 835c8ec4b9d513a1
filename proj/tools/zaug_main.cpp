#include "zaug/cli.hpp"

int main(int argc, char** argv) { return zaug::cli::run(argc, argv); }
