#include <iostream>

#include "ridg/cli.hpp"

int main(int argc, char** argv) {
  return ridg::run_cli(argc, argv, std::cout, std::cerr);
}
