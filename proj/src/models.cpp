#include "duch/models.hpp"

#include <cmath>
#include <fmt/format.h>
#include <random>

#include "duch/binary_io.hpp"
#include "duch/errors.hpp"

namespace duch {

namespace {

constexpr char kCheckpointMagic[] = "DUCHCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Linear kaiming_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  return {Param(uniform_matrix(in, out, bound, rng)), Param(Matrix(1, out))};
}

Linear xavier_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return {Param(uniform_matrix(in, out, bound, rng)), Param(Matrix(1, out))};
}

HashNetwork make_hash_network(std::size_t in_dim, const BundleShape& s, std::mt19937_64& rng) {
  HashNetwork net;
  net.in_dim = in_dim;
  net.hidden_dim = s.hidden;
  net.code_bits = s.code_bits;
  net.layer1 = kaiming_linear(in_dim, s.hidden, rng);
  net.layer2 = kaiming_linear(s.hidden, s.hidden, rng);
  net.bn = BatchNormState(s.hidden, s.bn_momentum, s.bn_epsilon);
  net.layer3 = xavier_linear(s.hidden, s.code_bits, rng);
  return net;
}

void check_width(const Matrix& batch, std::size_t expected, const char* what) {
  if (batch.cols() != expected) {
    throw DimensionError(
        fmt::format("{}: batch is {} but network expects width {}", what, batch.shape_string(), expected));
  }
}

// Tensors in checkpoint order.
std::vector<Matrix*> hash_tensors(HashNetwork& n, Matrix& rmean, Matrix& rvar) {
  return {&n.layer1.weight.value, &n.layer1.bias.value, &n.layer2.weight.value,
          &n.layer2.bias.value,   &n.bn.gamma.value,    &n.bn.beta.value,
          &rmean,                 &rvar,                &n.layer3.weight.value,
          &n.layer3.bias.value};
}

void write_matrix(std::ostream& out, const Matrix& m) {
  io::write_u64(out, m.rows());
  io::write_u64(out, m.cols());
  for (double v : m.values()) io::write_f64(out, v);
}

Matrix read_matrix(std::istream& in, std::size_t rows, std::size_t cols, const char* what) {
  const auto r = io::read_u64(in);
  const auto c = io::read_u64(in);
  if (r != rows || c != cols) {
    throw SizeMismatchError(
        fmt::format("checkpoint: {} is {}x{}, expected {}x{}", what, r, c, rows, cols));
  }
  Matrix m(rows, cols);
  for (double& v : m.values()) v = io::read_f64(in);
  return m;
}

void write_hash_network(std::ostream& out, const HashNetwork& n) {
  Matrix rmean(1, n.bn.width(), std::vector<double>(n.bn.running_mean));
  Matrix rvar(1, n.bn.width(), std::vector<double>(n.bn.running_var));
  io::write_f64(out, n.bn.momentum);
  io::write_f64(out, n.bn.epsilon);
  for (Matrix* m : hash_tensors(const_cast<HashNetwork&>(n), rmean, rvar)) write_matrix(out, *m);
}

void read_hash_network(std::istream& in, HashNetwork& n) {
  n.bn.momentum = io::read_f64(in);
  n.bn.epsilon = io::read_f64(in);
  Matrix rmean(1, n.bn.width());
  Matrix rvar(1, n.bn.width());
  for (Matrix* m : hash_tensors(n, rmean, rvar)) *m = read_matrix(in, m->rows(), m->cols(), "tensor");
  n.bn.running_mean.assign(rmean.values().begin(), rmean.values().end());
  n.bn.running_var.assign(rvar.values().begin(), rvar.values().end());
}

}  // namespace

std::vector<Param*> HashNetwork::params() {
  return {&layer1.weight, &layer1.bias, &layer2.weight, &layer2.bias,
          &bn.gamma,      &bn.beta,     &layer3.weight, &layer3.bias};
}

std::size_t HashNetwork::parameter_count() const {
  return in_dim * hidden_dim + hidden_dim + hidden_dim * hidden_dim + hidden_dim + 2 * hidden_dim +
         hidden_dim * code_bits + code_bits;
}

std::vector<Param*> DiscriminatorNet::params() {
  return {&layer1.weight, &layer1.bias, &layer2.weight, &layer2.bias};
}

BundleShape ModelBundle::shape() const {
  return {f.in_dim, g.in_dim, f.code_bits, f.hidden_dim, d.hidden_dim, f.bn.momentum, f.bn.epsilon};
}

ModelBundle init_bundle(const BundleShape& shape, std::uint64_t seed) {
  if (shape.d_img == 0 || shape.d_txt == 0 || shape.hidden == 0 || shape.disc_hidden == 0) {
    throw ConfigError("init_bundle: dimensions must be positive");
  }
  if (shape.code_bits < 8) throw ConfigError("init_bundle: code_bits must be at least 8");
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.init_seed = seed;
  b.f = make_hash_network(shape.d_img, shape, rng);
  b.g = make_hash_network(shape.d_txt, shape, rng);
  b.d.in_dim = shape.code_bits;
  b.d.hidden_dim = shape.disc_hidden;
  b.d.layer1 = kaiming_linear(shape.code_bits, shape.disc_hidden, rng);
  b.d.layer2 = xavier_linear(shape.disc_hidden, 1, rng);
  return b;
}

Var hash_forward(Tape& tape, HashNetwork& net, Var batch, Mode mode, bool trainable) {
  check_width(batch.value(), net.in_dim, "hash_forward");
  net.bn.mode = mode;
  auto p = [&](Param& param) { return tape.param(param, trainable); };
  Var h = ad::relu(ad::linear(batch, p(net.layer1.weight), p(net.layer1.bias)));
  h = ad::linear(h, p(net.layer2.weight), p(net.layer2.bias));
  h = ad::relu(ad::batch_norm(h, net.bn, p(net.bn.gamma), p(net.bn.beta)));
  return ad::tanh(ad::linear(h, p(net.layer3.weight), p(net.layer3.bias)));
}

Matrix hash_forward_eval(const HashNetwork& net, const Matrix& batch) {
  check_width(batch, net.in_dim, "hash_forward");
  Tape tape;
  BatchNormState bn = net.bn;
  bn.mode = Mode::eval;
  auto c = [&](const Param& param) { return tape.constant_ref(param.value); };
  Var h = ad::relu(ad::linear(tape.constant_ref(batch), c(net.layer1.weight), c(net.layer1.bias)));
  h = ad::linear(h, c(net.layer2.weight), c(net.layer2.bias));
  h = ad::relu(ad::batch_norm(h, bn, c(bn.gamma), c(bn.beta)));
  return ad::tanh(ad::linear(h, c(net.layer3.weight), c(net.layer3.bias))).value();
}

Var disc_forward(Tape& tape, DiscriminatorNet& net, Var codes, bool trainable) {
  check_width(codes.value(), net.in_dim, "disc_forward");
  auto p = [&](Param& param) { return tape.param(param, trainable); };
  Var h = ad::relu(ad::linear(codes, p(net.layer1.weight), p(net.layer1.bias)));
  return ad::sigmoid(ad::linear(h, p(net.layer2.weight), p(net.layer2.bias)));
}

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle,
                     const std::string& config_json) {
  auto out = io::open_out(path);
  io::write_bytes(out, std::string_view(kCheckpointMagic, 8));
  io::write_u32(out, kCheckpointVersion);
  io::write_u64(out, config_json.size());
  io::write_bytes(out, config_json);
  const BundleShape s = bundle.shape();
  for (std::uint64_t v : {std::uint64_t{s.d_img}, std::uint64_t{s.d_txt}, std::uint64_t{s.code_bits},
                          std::uint64_t{s.hidden}, std::uint64_t{s.disc_hidden}, bundle.init_seed}) {
    io::write_u64(out, v);
  }
  write_hash_network(out, bundle.f);
  write_hash_network(out, bundle.g);
  for (const Param* p : const_cast<DiscriminatorNet&>(bundle.d).params()) write_matrix(out, p->value);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  if (io::read_bytes(in, 8) != std::string_view(kCheckpointMagic, 8)) {
    throw FormatError(fmt::format("{}: not a checkpoint file", path.string()));
  }
  const auto version = io::read_u32(in);
  if (version != kCheckpointVersion) {
    throw VersionError(fmt::format("{}: checkpoint version {} unsupported", path.string(), version));
  }
  Checkpoint ck;
  ck.config_json = io::read_bytes(in, io::read_u64(in));
  BundleShape s;
  s.d_img = io::read_u64(in);
  s.d_txt = io::read_u64(in);
  s.code_bits = io::read_u64(in);
  s.hidden = io::read_u64(in);
  s.disc_hidden = io::read_u64(in);
  const auto seed = io::read_u64(in);
  // Allocate the right shapes, then overwrite every tensor from the file.
  ck.bundle = init_bundle(s, seed);
  read_hash_network(in, ck.bundle.f);
  read_hash_network(in, ck.bundle.g);
  for (Param* p : ck.bundle.d.params()) {
    p->value = read_matrix(in, p->value.rows(), p->value.cols(), "discriminator tensor");
  }
  return ck;
}

}  // namespace duch
