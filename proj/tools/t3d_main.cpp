#include <iostream>

#include "t3d/cli.hpp"

int main(int argc, char** argv) {
  return t3d::cli_main(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
