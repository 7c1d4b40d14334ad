#include "siammot/cli.hpp"

int main(int argc, char** argv) { return siammot::cli::run(argc, argv); }
