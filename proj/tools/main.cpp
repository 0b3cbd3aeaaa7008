#include <iostream>
#include <string>
#include <vector>

#include "gmgan/cli.hpp"

int main(int argc, char** argv) {
  return gmgan::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
