#include <iostream>

#include "fsnt/cli.hpp"

int main(int argc, char** argv) {
  return fsnt::cli::command_dispatch(argc, argv, std::cout, std::cerr);
}
