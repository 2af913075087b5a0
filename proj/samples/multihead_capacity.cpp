// Shows how splitting codes into heads multiplies the number of distinct
// centers a small codebook can supply.

#include <cstdio>

#include "crh/crh.hpp"

int main() {
  using namespace crh;

  const std::size_t K = 12, M = 8;
  const auto book = sample_codebook_unique(K, M, 5);
  for (std::size_t H : {1u, 2u, 3u}) {
    const auto layout = HeadLayout::split(K, H);
    std::size_t capacity = 1;
    for (std::size_t h = 0; h < H; ++h) capacity *= make_sub_codebook(book, layout, h).codes.size();
    std::printf("H=%zu d=%zu: %zu distinct centers from %zu codewords\n", H, layout.width, capacity, M);
  }
  std::printf("largest strict head count for M=%zu: %zu\n", M, max_heads(K, M));
}
