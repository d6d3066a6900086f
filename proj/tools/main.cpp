#include "commands.hpp"

int main(int argc, char** argv) { return ectfusion::cli::run(argc, argv); }
