#include <cdii/app.hpp>

int main(int argc, char** argv) { return cdii::main_entry(argc, argv); }
