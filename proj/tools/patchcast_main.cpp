#include "patchcast/experiment.hpp"

int main(int argc, char** argv) { return patchcast::cli_main(argc, argv); }
