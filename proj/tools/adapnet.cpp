#include "adapnet/app.hpp"

int main(int argc, char** argv) { return adapnet::run(argc, argv); }
