#include "segalign/cli.hpp"

int main(int argc, char** argv) { return segalign::parse_and_dispatch(argc, argv); }
