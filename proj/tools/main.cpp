#include <iostream>

#include "bdlab/cli.hpp"

int main(int argc, char** argv) {
    return bdlab::run_cli(argc, argv, std::cout, std::cerr);
}
