#include "tkc/cli.hpp"

int main(int argc, char** argv) { return tkc::cli_main(argc, argv); }
