#include <cstdio>

int main() {
  std::fprintf(stderr, "scenario runner not wired yet\n");
  return 2;
}
