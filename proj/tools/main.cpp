#include "cli.hpp"

int main(int argc, char** argv) { return cvxspline::cli::run(argc, argv); }
