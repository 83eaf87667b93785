#include "deae/cli.hpp"

int main(int argc, char** argv) { return deae::dispatch(argc, argv); }
