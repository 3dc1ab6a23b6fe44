#ifndef EFMCA_LATENT_HPP
#define EFMCA_LATENT_HPP

#include <bit>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace efmca {

/// H-bit binary latent configuration.
class LatentState {
 public:
  LatentState() = default;
  explicit LatentState(std::size_t H) : size_(H), words_((H + 63) / 64, 0) {}

  LatentState(std::initializer_list<int> bits) : LatentState(bits.size()) {
    std::size_t h = 0;
    for (int b : bits) set(h++, b != 0);
  }

  /// State whose low H bits are taken from `mask` (H <= 64).
  static LatentState from_mask(std::uint64_t mask, std::size_t H) {
    LatentState s(H);
    if (H > 0) s.words_[0] = H >= 64 ? mask : (mask & ((std::uint64_t{1} << H) - 1));
    return s;
  }

  std::size_t size() const { return size_; }

  bool test(std::size_t h) const { return (words_[h >> 6] >> (h & 63)) & 1u; }
  bool operator[](std::size_t h) const { return test(h); }

  void set(std::size_t h, bool on = true) {
    const std::uint64_t bit = std::uint64_t{1} << (h & 63);
    if (on)
      words_[h >> 6] |= bit;
    else
      words_[h >> 6] &= ~bit;
  }
  void flip(std::size_t h) { words_[h >> 6] ^= std::uint64_t{1} << (h & 63); }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }
  bool none() const {
    for (auto w : words_)
      if (w) return false;
    return true;
  }
  bool any() const { return !none(); }

  /// Calls f(h) for every active unit in ascending order.
  template <class F>
  void for_each_active(F&& f) const {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      std::uint64_t w = words_[i];
      while (w) {
        f(i * 64 + static_cast<std::size_t>(std::countr_zero(w)));
        w &= w - 1;
      }
    }
  }

  std::vector<std::size_t> active() const {
    std::vector<std::size_t> out;
    for_each_active([&](std::size_t h) { out.push_back(h); });
    return out;
  }

  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint64_t>& words() { return words_; }

  std::string to_string() const {
    std::string s(size_, '0');
    for (std::size_t h = 0; h < size_; ++h)
      if (test(h)) s[h] = '1';
    return s;
  }

  friend bool operator==(const LatentState&, const LatentState&) = default;
  friend bool operator<(const LatentState& a, const LatentState& b) {
    return a.words_ < b.words_;
  }

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

struct LatentStateHash {
  std::size_t operator()(const LatentState& s) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ s.size();
    for (auto w : s.words()) h = (h ^ w) * 0x100000001b3ULL + (h >> 29);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace efmca

#endif  // EFMCA_LATENT_HPP
