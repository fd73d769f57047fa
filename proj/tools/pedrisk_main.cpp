#include <iostream>
#include <string>
#include <vector>

#include "pedrisk/cli.hpp"

int main(int argc, char** argv) {
  return pedrisk::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
