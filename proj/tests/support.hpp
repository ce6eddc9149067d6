#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <gtest/gtest.h>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "complearn/baselines.hpp"
#include "complearn/embedpack.hpp"
#include "complearn/lexicon.hpp"

namespace complearn::testing {

/// Small synthetic pack: dim 96, three 24-dim category blocks, reduced counts.
inline EmbeddingPack small_pack(std::uint64_t seed, float noise = 0.05f) {
  SyntheticConfig c;
  c.dim = 96;
  c.noise_sigma = noise;
  c.train_count = 400;
  c.test_nc_count = 90;
  c.test_v_count = 60;
  c.seed = seed;
  return generate_synthetic(c);
}

/// Views every value/grad array of a double-precision model as flat blocks.
struct ParamBlocks {
  std::vector<std::pair<double*, std::size_t>> values;
  std::vector<std::pair<double*, std::size_t>> grads;

  template <typename M>
  void add(M& value, M& grad) {
    values.emplace_back(value.data(), static_cast<std::size_t>(value.size()));
    grads.emplace_back(grad.data(), static_cast<std::size_t>(grad.size()));
  }
  void add(LinearLayerT<double>& l) {
    add(l.weights, l.grad_weights);
    add(l.bias, l.grad_bias);
  }
  std::vector<double> get(bool grad) const {
    std::vector<double> out;
    for (const auto& [p, n] : grad ? grads : values) out.insert(out.end(), p, p + n);
    return out;
  }
  void set(std::span<const double> flat) const {
    std::size_t o = 0;
    for (const auto& [p, n] : values) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(o), flat.begin() + static_cast<std::ptrdiff_t>(o + n), p);
      o += n;
    }
  }
};

inline ParamBlocks blocks_of(EncoderT<double>& e) {
  ParamBlocks b;
  b.add(e.filter_raw, e.grad_filter);
  b.add(e.hidden);
  b.add(e.latent);
  return b;
}

inline ParamBlocks blocks_of(DecoderT<double>& d) {
  ParamBlocks b;
  for (auto& l : d.layers) b.add(l);
  return b;
}

inline ParamBlocks blocks_of(MlpHeadT<double>& h) {
  ParamBlocks b;
  b.add(h.first);
  b.add(h.second);
  return b;
}

/// Ground-truth edit: e_q with q's category block replaced by p's clean signature.
inline Vec32 oracle_edit(const EmbeddingPack& pack, const Vec32& e_q, const std::string& p) {
  const auto& truth = *pack.synthetic_truth;
  const auto cat = *pack.category_map.category_of(p);
  const auto& dims = truth.category_dims.at(cat);
  const Vec32& sig = truth.signatures.at(p);
  Vec32 out = e_q;
  for (std::size_t i = 0; i < dims.size(); ++i) out[static_cast<Eigen::Index>(dims[i])] = sig[static_cast<Eigen::Index>(i)];
  return out;
}


/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "complearn-tests" /
             (std::string(info->test_suite_name()) + "." + info->name() + "." + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

}  // namespace complearn::testing
