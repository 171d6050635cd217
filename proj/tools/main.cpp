#include "fv/cli.hpp"

int main(int argc, char** argv) { return fv::dispatch(argc, argv); }
