#include "adsc/cli.hpp"

int main(int argc, char** argv) { return adsc::cli_main(argc, argv); }
