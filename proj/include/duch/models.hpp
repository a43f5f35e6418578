#ifndef DUCH_MODELS_HPP_
#define DUCH_MODELS_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duch/autodiff.hpp"

namespace duch {

struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out
};

/// Image (f) or text (g) hashing network:
/// linear -> relu -> linear -> batchnorm -> relu -> linear -> tanh.
struct HashNetwork {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t code_bits = 0;
  Linear layer1;
  Linear layer2;
  BatchNormState bn;
  Linear layer3;

  std::vector<Param*> params();
  std::size_t parameter_count() const;
};

/// Adversarial discriminator: linear -> relu -> linear -> sigmoid. Outputs the
/// probability that a code came from the text network.
struct DiscriminatorNet {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  Linear layer1;
  Linear layer2;

  std::vector<Param*> params();
};

struct BundleShape {
  std::size_t d_img = 512;
  std::size_t d_txt = 768;
  std::size_t code_bits = 64;
  std::size_t hidden = 1024;
  std::size_t disc_hidden = 512;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
};

struct ModelBundle {
  HashNetwork f;
  HashNetwork g;
  DiscriminatorNet d;
  std::uint64_t init_seed = 0;

  BundleShape shape() const;
};

// Kaiming-uniform for layers feeding a relu, Xavier-uniform for output
// layers, zero biases. Deterministic in seed.
ModelBundle init_bundle(const BundleShape& shape, std::uint64_t seed);

// Records the forward pass on tape. Sets net.bn.mode to mode; train mode
// updates running statistics. With trainable=false parameters enter the tape
// as constants.
Var hash_forward(Tape& tape, HashNetwork& net, Var batch, Mode mode, bool trainable = true);

// Eval-mode codes without touching the network.
Matrix hash_forward_eval(const HashNetwork& net, const Matrix& batch);

Var disc_forward(Tape& tape, DiscriminatorNet& net, Var codes, bool trainable = true);

// Versioned little-endian checkpoint; layout in docs/formats.md.
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle,
                     const std::string& config_json);

struct Checkpoint {
  ModelBundle bundle;
  std::string config_json;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace duch

#endif  // DUCH_MODELS_HPP_
