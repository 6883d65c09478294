#include "swingid/harness.hpp"

int main(int argc, char** argv) { return swingid::run_cli(argc, argv); }
