#include "pacm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pacm/json_io.hpp"

namespace pacm {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'A', 'C', 'M', 'C', 'K', 'P', 'T'};

std::string activation_name(Activation a) {
  return a == Activation::identity ? "identity" : "leaky_relu";
}

Activation activation_from(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw CheckpointError("unknown activation '" + s + "'");
}

json network_header(const MlpParams& p) {
  return {{"layer_dims", p.layer_dims},
          {"activation", activation_name(p.activation)},
          {"batch_norm", p.has_batch_norm()},
          {"revision", p.revision}};
}

json optimizer_header(const OptimizerState& o) {
  return {{"learning_rate", o.learning_rate},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay}};
}

// Calls f(name, block) for every parameter, running statistic and velocity
// block of one network, in file order.
template <class Params, class Grads, class F>
void visit_network(const std::string& prefix, Params& p, Grads& v, F&& f) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    f(prefix + "/w" + std::to_string(l), p.weights[l]);
    f(prefix + "/b" + std::to_string(l), p.biases[l]);
  }
  for (std::size_t l = 0; l < p.norm.size(); ++l) {
    f(prefix + "/gamma" + std::to_string(l), p.norm[l].gamma);
    f(prefix + "/beta" + std::to_string(l), p.norm[l].beta);
    f(prefix + "/running_mean" + std::to_string(l), p.norm[l].running_mean);
    f(prefix + "/running_var" + std::to_string(l), p.norm[l].running_var);
  }
  for (std::size_t l = 0; l < v.weights.size(); ++l) {
    f(prefix + "/velocity_w" + std::to_string(l), v.weights[l]);
    f(prefix + "/velocity_b" + std::to_string(l), v.biases[l]);
  }
  for (std::size_t l = 0; l < v.gamma.size(); ++l) {
    f(prefix + "/velocity_gamma" + std::to_string(l), v.gamma[l]);
    f(prefix + "/velocity_beta" + std::to_string(l), v.beta[l]);
  }
}

template <class C, class MF, class MP, class F>
void visit_all(C& c, MF& memory_frontal, MP& memory_profile, F&& f) {
  visit_network("frontal", c.frontal, c.frontal_opt.velocity, f);
  if (!c.shared_encoder) visit_network("profile", c.profile, c.profile_opt.velocity, f);
  visit_network("discriminator", c.discriminator.net, c.discriminator_opt.velocity, f);
  f(std::string("memory/frontal"), memory_frontal);
  f(std::string("memory/profile"), memory_profile);
}

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t x = 0;
  for (int i = 0; i < bytes; ++i)
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return x;
}

template <class Block>
bool same_block(const Block& a, const Block& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

bool same_velocity(const MlpGradients& a, const MlpGradients& b) {
  auto eq = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!same_block(x[i], y[i])) return false;
    return true;
  };
  return eq(a.weights, b.weights) && eq(a.biases, b.biases) && eq(a.gamma, b.gamma) &&
         eq(a.beta, b.beta);
}

bool same_optimizer(const OptimizerState& a, const OptimizerState& b) {
  return a.learning_rate == b.learning_rate && a.momentum == b.momentum &&
         a.weight_decay == b.weight_decay && same_velocity(a.velocity, b.velocity);
}

bool same_network(const MlpParams& a, const MlpParams& b) {
  return same_parameters(a, b) && a.revision == b.revision;
}

MlpParams skeleton_network(const json& h) {
  const auto dims = json_io::get<std::vector<int>>(h, "layer_dims", "checkpoint network");
  if (dims.size() < 2) throw CheckpointError("network needs at least two layer widths");
  for (int d : dims)
    if (d < 1 || d > (1 << 20)) throw CheckpointError("implausible layer width in manifest");
  std::mt19937_64 unused(0);
  auto p = make_mlp(dims, activation_from(json_io::get<std::string>(h, "activation", "network")),
                    json_io::get<bool>(h, "batch_norm", "checkpoint network"), unused);
  p.revision = json_io::get<std::uint64_t>(h, "revision", "checkpoint network");
  return p;
}

OptimizerState skeleton_optimizer(const json& h, const MlpParams& p) {
  OptimizerState o;
  o.learning_rate = json_io::get<double>(h, "learning_rate", "checkpoint optimizer");
  o.momentum = json_io::get<double>(h, "momentum", "checkpoint optimizer");
  o.weight_decay = json_io::get<double>(h, "weight_decay", "checkpoint optimizer");
  o.velocity = MlpGradients::zeros_like(p);
  return o;
}

Checkpoint parse(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t manifest_len = get_le(bytes, 12, 8);
  if (manifest_len > bytes.size() - 20)
    throw CheckpointError("manifest length " + std::to_string(manifest_len) +
                          " exceeds file size");
  json m;
  try {
    m = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(manifest_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt manifest: ") + e.what());
  }

  Checkpoint c;
  Matrix memory_frontal, memory_profile;
  std::vector<int> ids_frontal, ids_profile;
  int first_frontal = 0, first_profile = 0;
  double memory_momentum = 0.0;
  std::size_t degenerate = 0;
  try {
    if (json_io::get<std::string>(m, "format", "checkpoint") != "pacm-checkpoint")
      throw CheckpointError("manifest format tag is wrong");
    c.config = train_config_from_json(m.at("config"));
    c.shared_encoder = json_io::get<bool>(m, "shared_encoder", "checkpoint");
    const auto& nets = m.at("networks");
    const auto& opts = m.at("optimizers");
    c.frontal = skeleton_network(nets.at("frontal"));
    c.frontal_opt = skeleton_optimizer(opts.at("frontal"), c.frontal);
    if (!c.shared_encoder) {
      c.profile = skeleton_network(nets.at("profile"));
      c.profile_opt = skeleton_optimizer(opts.at("profile"), c.profile);
    }
    c.discriminator.net = skeleton_network(nets.at("discriminator"));
    c.discriminator_opt = skeleton_optimizer(opts.at("discriminator"), c.discriminator.net);

    const auto& mem = m.at("memory");
    const int dim = json_io::get<int>(mem, "dim", "checkpoint memory");
    ids_frontal = json_io::get<std::vector<int>>(mem, "frontal_identity", "checkpoint memory");
    ids_profile = json_io::get<std::vector<int>>(mem, "profile_identity", "checkpoint memory");
    if (dim < 0 || dim > (1 << 20)) throw CheckpointError("implausible memory width");
    memory_frontal.resize(static_cast<Eigen::Index>(ids_frontal.size()), dim);
    memory_profile.resize(static_cast<Eigen::Index>(ids_profile.size()), dim);
    first_frontal = json_io::get<int>(mem, "frontal_first", "checkpoint memory");
    first_profile = json_io::get<int>(mem, "profile_first", "checkpoint memory");
    memory_momentum = json_io::get<double>(mem, "momentum", "checkpoint memory");
    degenerate = json_io::get<std::size_t>(mem, "degenerate_updates", "checkpoint memory");

    const auto& counters = m.at("counters");
    c.epoch = json_io::get<int>(counters, "epoch", "checkpoint counters");
    c.iteration_in_epoch = json_io::get<int>(counters, "iteration_in_epoch", "checkpoint counters");
    c.global_iteration = json_io::get<std::uint64_t>(counters, "global_iteration", "counters");
    c.rng_state = json_io::get<std::string>(m, "rng", "checkpoint");
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid manifest: ") + e.what());
  }

  // Block list in the manifest must match the shapes it declares.
  std::vector<std::pair<std::string, std::uint64_t>> expected;
  visit_all(c, memory_frontal, memory_profile, [&](const std::string& name, auto& block) {
    expected.emplace_back(name, static_cast<std::uint64_t>(block.size()));
  });
  const auto& listed = m.at("blocks");
  if (!listed.is_array() || listed.size() != expected.size())
    throw CheckpointError("block list does not match declared shapes");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& b = listed[i];
    if (!b.is_object() || b.value("name", "") != expected[i].first ||
        b.value("count", std::uint64_t{0}) != expected[i].second)
      throw CheckpointError("block " + std::to_string(i) + " does not match declared shapes");
    total += expected[i].second;
  }
  const std::uint64_t payload = bytes.size() - 20 - manifest_len;
  if (payload != total * 8)
    throw CheckpointError("payload is " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(total * 8));

  std::size_t at = 20 + manifest_len;
  visit_all(c, memory_frontal, memory_profile, [&](const std::string&, auto& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r)
      for (Eigen::Index col = 0; col < block.cols(); ++col) {
        block(r, col) = std::bit_cast<double>(get_le(bytes, at, 8));
        at += 8;
      }
  });

  try {
    c.memory = MemoryBuffer(std::move(memory_frontal), std::move(memory_profile),
                            std::move(ids_frontal), std::move(ids_profile), first_frontal,
                            first_profile, memory_momentum);
    c.memory.set_degenerate_updates(degenerate);
    c.frontal.validate();
    c.discriminator.net.validate();
    if (c.shared_encoder) {
      c.profile = c.frontal;
      c.profile_opt = c.frontal_opt;
    } else {
      c.profile.validate();
    }
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint contents: ") + e.what());
  }
  return c;
}

}  // namespace

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
  return train_config_to_json(a.config) == train_config_to_json(b.config) &&
         a.shared_encoder == b.shared_encoder && same_network(a.frontal, b.frontal) &&
         same_network(a.profile, b.profile) &&
         same_network(a.discriminator.net, b.discriminator.net) &&
         same_optimizer(a.frontal_opt, b.frontal_opt) &&
         same_optimizer(a.profile_opt, b.profile_opt) &&
         same_optimizer(a.discriminator_opt, b.discriminator_opt) &&
         same_block(a.memory.entries(View::frontal), b.memory.entries(View::frontal)) &&
         same_block(a.memory.entries(View::profile), b.memory.entries(View::profile)) &&
         a.memory.identities(View::frontal) == b.memory.identities(View::frontal) &&
         a.memory.identities(View::profile) == b.memory.identities(View::profile) &&
         a.memory.first_instance(View::frontal) == b.memory.first_instance(View::frontal) &&
         a.memory.first_instance(View::profile) == b.memory.first_instance(View::profile) &&
         a.memory.momentum() == b.memory.momentum() &&
         a.memory.degenerate_updates() == b.memory.degenerate_updates() &&
         a.epoch == b.epoch && a.iteration_in_epoch == b.iteration_in_epoch &&
         a.global_iteration == b.global_iteration && a.rng_state == b.rng_state;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  json nets{{"frontal", network_header(c.frontal)},
            {"discriminator", network_header(c.discriminator.net)}};
  json opts{{"frontal", optimizer_header(c.frontal_opt)},
            {"discriminator", optimizer_header(c.discriminator_opt)}};
  if (!c.shared_encoder) {
    nets["profile"] = network_header(c.profile);
    opts["profile"] = optimizer_header(c.profile_opt);
  }
  const Matrix& mf = c.memory.entries(View::frontal);
  const Matrix& mp = c.memory.entries(View::profile);
  json blocks = json::array();
  std::uint64_t total = 0;
  visit_all(c, mf, mp, [&](const std::string& name, const auto& block) {
    blocks.push_back({{"name", name}, {"count", block.size()}});
    total += static_cast<std::uint64_t>(block.size());
  });
  const json manifest{
      {"format", "pacm-checkpoint"},
      {"config", train_config_to_json(c.config)},
      {"shared_encoder", c.shared_encoder},
      {"networks", nets},
      {"optimizers", opts},
      {"memory",
       {{"dim", c.memory.dim()},
        {"momentum", c.memory.momentum()},
        {"frontal_first", c.memory.first_instance(View::frontal)},
        {"profile_first", c.memory.first_instance(View::profile)},
        {"frontal_identity", c.memory.identities(View::frontal)},
        {"profile_identity", c.memory.identities(View::profile)},
        {"degenerate_updates", c.memory.degenerate_updates()}}},
      {"counters",
       {{"epoch", c.epoch},
        {"iteration_in_epoch", c.iteration_in_epoch},
        {"global_iteration", c.global_iteration}}},
      {"rng", c.rng_state},
      {"blocks", blocks}};
  const std::string text = manifest.dump();

  std::string out(kMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + total * 8);
  visit_all(c, mf, mp, [&](const std::string&, const auto& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r)
      for (Eigen::Index col = 0; col < block.cols(); ++col)
        put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(block(r, col))));
  });

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace pacm
