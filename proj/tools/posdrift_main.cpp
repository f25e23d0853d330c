#include "posdrift/cli.hpp"

int main(int argc, char** argv) { return posdrift::cli_main(argc, argv); }
