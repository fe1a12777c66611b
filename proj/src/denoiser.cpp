#include "topogen/denoiser.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include <nlohmann/json.hpp>

#include "topogen/errors.hpp"
#include "topogen/rng.hpp"

namespace topogen {

// ---- ParamStore ------------------------------------------------------

template <class T>
nn::Parameter<T>& ParamStore<T>::add(const std::string& name, const nn::Shape& shape) {
  if (index_.count(name)) throw ValidationError("ParamStore: duplicate parameter " + name);
  params_.push_back(std::make_unique<nn::Parameter<T>>(name, shape));
  index_[name] = params_.size() - 1;
  return *params_.back();
}

template <class T>
nn::Parameter<T>& ParamStore<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

template <class T>
const nn::Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

template <class T>
std::size_t ParamStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void ParamStore<T>::zero_grads() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
bool ParamStore<T>::grads_finite() const {
  for (const auto& p : params_)
    for (T g : p->grad)
      if (!std::isfinite(static_cast<double>(g))) return false;
  return true;
}

template <class T>
double ParamStore<T>::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_)
    for (T g : p->grad) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

// ---- DenoiserConfig --------------------------------------------------

void DenoiserConfig::validate() const {
  if (image_size < 4) throw ValidationError("denoiser: image_size must be >= 4");
  if (in_channels < 1) throw ValidationError("denoiser: in_channels must be >= 1");
  if (base_channels < 1) throw ValidationError("denoiser: base_channels must be >= 1");
  if (channel_mult.empty()) throw ValidationError("denoiser: channel_mult must be non-empty");
  if (blocks_per_level < 1) throw ValidationError("denoiser: blocks_per_level must be >= 1");
  if (emb_dim < 2 || emb_dim % 2 != 0)
    throw ValidationError("denoiser: emb_dim must be even and >= 2");
  if (c_max < 1) throw ValidationError("denoiser: c_max must be >= 1");
  if (num_classes < 0) throw ValidationError("denoiser: num_classes must be >= 0");
  if (groups < 1) throw ValidationError("denoiser: groups must be >= 1");
  if (T < 1) throw ValidationError("denoiser: T must be >= 1");
  int size = image_size;
  for (std::size_t i = 0; i + 1 < channel_mult.size(); ++i) {
    if (size % 2 != 0)
      throw ValidationError("denoiser: image_size not divisible across levels");
    size /= 2;
  }
  for (int m : channel_mult) {
    if (m < 1) throw ValidationError("denoiser: channel multipliers must be >= 1");
    if ((base_channels * m) % groups != 0)
      throw ValidationError("denoiser: channels at every level must be divisible by groups");
  }
}

// ---- Denoiser --------------------------------------------------------

template <class T>
Denoiser<T>::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build_params();
}

template <class T>
void Denoiser<T>::build_params() {
  const int base = cfg_.base_channels;
  const int emb = cfg_.emb_dim;
  const auto ch = [&](int level) { return base * cfg_.channel_mult[level]; };
  const int L = static_cast<int>(cfg_.channel_mult.size());

  params_.add("stem.w", {base, cfg_.in_channels, 3, 3});
  params_.add("stem.b", {1, base, 1, 1});

  params_.add("temb.l1.w", {emb, emb, 1, 1});
  params_.add("temb.l1.b", {1, emb, 1, 1});
  params_.add("temb.l2.w", {emb, emb, 1, 1});
  params_.add("temb.l2.b", {1, emb, 1, 1});

  params_.add("cemb.table", {cfg_.c_max, emb, 1, 1});
  params_.add("cemb.l1.w", {emb, emb, 1, 1});
  params_.add("cemb.l1.b", {1, emb, 1, 1});
  params_.add("cemb.l2.w", {emb, emb, 1, 1});
  params_.add("cemb.l2.b", {1, emb, 1, 1});

  if (cfg_.num_classes > 0) params_.add("cls.table", {cfg_.num_classes, emb, 1, 1});

  const auto block_params = [&](const std::string& pfx, int cin, int cout) {
    params_.add(pfx + ".gn1.gamma", {1, cin, 1, 1});
    params_.add(pfx + ".gn1.beta", {1, cin, 1, 1});
    params_.add(pfx + ".conv1.w", {cout, cin, 3, 3});
    params_.add(pfx + ".conv1.b", {1, cout, 1, 1});
    params_.add(pfx + ".emb.w", {cout, emb, 1, 1});
    params_.add(pfx + ".emb.b", {1, cout, 1, 1});
    params_.add(pfx + ".gn2.gamma", {1, cout, 1, 1});
    params_.add(pfx + ".gn2.beta", {1, cout, 1, 1});
    params_.add(pfx + ".conv2.w", {cout, cout, 3, 3});
    params_.add(pfx + ".conv2.b", {1, cout, 1, 1});
    if (cin != cout) {
      params_.add(pfx + ".skip.w", {cout, cin, 1, 1});
      params_.add(pfx + ".skip.b", {1, cout, 1, 1});
    }
  };

  int cur = base;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < cfg_.blocks_per_level; ++j) {
      block_params("enc" + std::to_string(i) + ".b" + std::to_string(j), cur, ch(i));
      cur = ch(i);
    }
  for (int i = L - 1; i >= 0; --i) {
    const int target = i > 0 ? ch(i - 1) : ch(0);
    for (int j = 0; j < cfg_.blocks_per_level; ++j) {
      block_params("dec" + std::to_string(i) + ".b" + std::to_string(j), cur, target);
      cur = target;
    }
  }

  params_.add("head.gn.gamma", {1, cur, 1, 1});
  params_.add("head.gn.beta", {1, cur, 1, 1});
  params_.add("head.conv.w", {cfg_.in_channels, cur, 3, 3});
  params_.add("head.conv.b", {1, cfg_.in_channels, 1, 1});
}

template <class T>
Denoiser<T> Denoiser<T>::random_init(const DenoiserConfig& cfg, std::uint64_t seed) {
  Denoiser<T> model(cfg);
  Rng rng(seed);

  const auto ends_with = [](const std::string& s, const std::string& sfx) {
    return s.size() >= sfx.size() && s.compare(s.size() - sfx.size(), sfx.size(), sfx) == 0;
  };
  const auto fill_uniform = [&](nn::Parameter<T>& p, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (T& v : p.value) v = static_cast<T>(u(rng));
  };

  for (std::size_t i = 0; i < model.params_.count(); ++i) {
    nn::Parameter<T>& p = model.params_.at(i);
    if (ends_with(p.name, ".gamma")) {
      std::fill(p.value.begin(), p.value.end(), T(1));
    } else if (ends_with(p.name, ".beta")) {
      // stays zero
    } else if (ends_with(p.name, ".table")) {
      fill_uniform(p, 1.0 / std::sqrt(static_cast<double>(cfg.emb_dim)));
    } else if (ends_with(p.name, ".w")) {
      // fan-in: input channels times the kernel footprint
      const double fan = static_cast<double>(p.shape.c) * p.shape.h * p.shape.w;
      fill_uniform(p, 1.0 / std::sqrt(fan));
    } else if (ends_with(p.name, ".b")) {
      const nn::Parameter<T>& w =
          model.params_.get(p.name.substr(0, p.name.size() - 2) + ".w");
      const double fan = static_cast<double>(w.shape.c) * w.shape.h * w.shape.w;
      fill_uniform(p, 1.0 / std::sqrt(fan));
    } else {
      throw ValidationError("denoiser init: unclassified parameter " + p.name);
    }
  }
  // Zero head: the fresh model predicts zero noise, a stable starting point.
  auto& hw = model.params_.get("head.conv.w");
  std::fill(hw.value.begin(), hw.value.end(), T(0));
  auto& hb = model.params_.get("head.conv.b");
  std::fill(hb.value.begin(), hb.value.end(), T(0));
  return model;
}

template <class T>
typename nn::Tape<T>::Ref Denoiser<T>::forward(nn::Tape<T>& tape,
                                               typename nn::Tape<T>::Ref x_t,
                                               const std::vector<int>& t,
                                               const std::vector<int>& c,
                                               const std::vector<int>& class_ids) const {
  using Ref = typename nn::Tape<T>::Ref;
  const nn::Shape& xs = tape.shape(x_t);
  const int N = xs.n;
  if (xs.c != cfg_.in_channels || xs.h != cfg_.image_size || xs.w != cfg_.image_size)
    throw ValidationError("denoiser forward: input shape " + xs.str() +
                          " does not match the config");
  if (static_cast<int>(t.size()) != N || static_cast<int>(c.size()) != N)
    throw ValidationError("denoiser forward: need one t and one c per sample");
  for (int v : t)
    if (v < 1 || v > cfg_.T) throw ValidationError("denoiser forward: t out of range [1, T]");
  for (int v : c)
    if (v < 1 || v > cfg_.c_max)
      throw ValidationError("denoiser forward: c out of range [1, c_max]");
  if (cfg_.num_classes > 0) {
    if (static_cast<int>(class_ids.size()) != N)
      throw ValidationError("denoiser forward: need one class id per sample");
    for (int v : class_ids)
      if (v < 0 || v >= cfg_.num_classes)
        throw ValidationError("denoiser forward: class id out of range");
  } else if (!class_ids.empty()) {
    throw ValidationError("denoiser forward: class ids given but class conditioning is off");
  }

  // `params_` is conceptually const here; tape binding needs mutable
  // references because backward accumulates into Parameter::grad.
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(params_);
  const auto P = [&](const std::string& name) { return tape.param(ps.get(name)); };

  // Sinusoidal timestep features: geometric frequencies, sin then cos.
  const int emb = cfg_.emb_dim, half = emb / 2;
  std::vector<T> tf(static_cast<std::size_t>(N) * emb);
  for (int s = 0; s < N; ++s)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      tf[static_cast<std::size_t>(s) * emb + i] = static_cast<T>(std::sin(t[s] * freq));
      tf[static_cast<std::size_t>(s) * emb + half + i] = static_cast<T>(std::cos(t[s] * freq));
    }
  Ref temb = tape.input({N, emb, 1, 1}, std::move(tf));
  temb = tape.linear(temb, P("temb.l1.w"), P("temb.l1.b"));
  temb = tape.silu(temb);
  temb = tape.linear(temb, P("temb.l2.w"), P("temb.l2.b"));

  std::vector<int> c_rows(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) c_rows[i] = c[i] - 1;
  Ref cemb = tape.embedding(P("cemb.table"), std::move(c_rows));
  cemb = tape.linear(cemb, P("cemb.l1.w"), P("cemb.l1.b"));
  cemb = tape.silu(cemb);
  cemb = tape.linear(cemb, P("cemb.l2.w"), P("cemb.l2.b"));

  Ref cond = tape.add(temb, cemb);
  if (cfg_.num_classes > 0)
    cond = tape.add(cond, tape.embedding(P("cls.table"), class_ids));
  const Ref cond_act = tape.silu(cond);

  const auto resblock = [&](Ref x, const std::string& pfx, int cin, int cout) -> Ref {
    Ref h = tape.group_norm(x, P(pfx + ".gn1.gamma"), P(pfx + ".gn1.beta"), cfg_.groups);
    h = tape.silu(h);
    h = tape.conv2d(h, P(pfx + ".conv1.w"), P(pfx + ".conv1.b"), 1);
    h = tape.add_channel_bias(h, tape.linear(cond_act, P(pfx + ".emb.w"), P(pfx + ".emb.b")));
    h = tape.group_norm(h, P(pfx + ".gn2.gamma"), P(pfx + ".gn2.beta"), cfg_.groups);
    h = tape.silu(h);
    h = tape.conv2d(h, P(pfx + ".conv2.w"), P(pfx + ".conv2.b"), 1);
    const Ref sk = cin == cout ? x : tape.conv2d(x, P(pfx + ".skip.w"), P(pfx + ".skip.b"), 0);
    return tape.add(h, sk);
  };

  const int base = cfg_.base_channels;
  const auto ch = [&](int level) { return base * cfg_.channel_mult[level]; };
  const int L = static_cast<int>(cfg_.channel_mult.size());

  Ref x = tape.conv2d(x_t, P("stem.w"), P("stem.b"), 1);
  int cur = base;
  std::vector<Ref> skips(L);
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < cfg_.blocks_per_level; ++j) {
      x = resblock(x, "enc" + std::to_string(i) + ".b" + std::to_string(j), cur, ch(i));
      cur = ch(i);
    }
    skips[i] = x;
    if (i < L - 1) x = tape.avg_pool2(x);
  }
  for (int i = L - 1; i >= 0; --i) {
    const int target = i > 0 ? ch(i - 1) : ch(0);
    for (int j = 0; j < cfg_.blocks_per_level; ++j) {
      x = resblock(x, "dec" + std::to_string(i) + ".b" + std::to_string(j), cur, target);
      cur = target;
    }
    if (i > 0) {
      x = tape.upsample_nearest2(x);
      x = tape.add(x, skips[i - 1]);
    }
  }

  x = tape.group_norm(x, P("head.gn.gamma"), P("head.gn.beta"), cfg_.groups);
  x = tape.silu(x);
  x = tape.conv2d(x, P("head.conv.w"), P("head.conv.b"), 1);
  return x;
}

template <class T>
std::vector<T> Denoiser<T>::predict_eps(const std::vector<T>& x_t, int n,
                                        const std::vector<int>& t, const std::vector<int>& c,
                                        const std::vector<int>& class_ids) const {
  const nn::Shape s{n, cfg_.in_channels, cfg_.image_size, cfg_.image_size};
  if (x_t.size() != s.numel())
    throw ValidationError("predict_eps: input size does not match config");
  nn::Tape<T> tape;
  const auto in = tape.input(s, x_t);
  const auto out = forward(tape, in, t, c, class_ids);
  return tape.value(out);
}

// ---- checkpoint I/O --------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'T', 'D', 'N', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

nlohmann::ordered_json config_to_json(const DenoiserConfig& c) {
  nlohmann::ordered_json j;
  j["image_size"] = c.image_size;
  j["in_channels"] = c.in_channels;
  j["base_channels"] = c.base_channels;
  j["channel_mult"] = c.channel_mult;
  j["blocks_per_level"] = c.blocks_per_level;
  j["emb_dim"] = c.emb_dim;
  j["c_max"] = c.c_max;
  j["num_classes"] = c.num_classes;
  j["groups"] = c.groups;
  j["T"] = c.T;
  return j;
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.blocks_per_level = j.at("blocks_per_level").get<int>();
  c.emb_dim = j.at("emb_dim").get<int>();
  c.c_max = j.at("c_max").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.groups = j.at("groups").get<int>();
  c.T = j.at("T").get<int>();
  return c;
}

void write_u32_le(std::FILE* f, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                        static_cast<unsigned char>((x >> 8) & 0xff),
                        static_cast<unsigned char>((x >> 16) & 0xff),
                        static_cast<unsigned char>((x >> 24) & 0xff)};
  if (std::fwrite(b, 1, 4, f) != 4) throw ValidationError("checkpoint: short write");
}

std::uint32_t read_u32_le(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw ValidationError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

template <class T>
void save_checkpoint(const Denoiser<T>& model, const std::string& path) {
  nlohmann::ordered_json header;
  header["config"] = config_to_json(model.config());
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  const ParamStore<T>& ps = model.params();
  for (std::size_t i = 0; i < ps.count(); ++i) {
    const nn::Parameter<T>& p = ps.at(i);
    manifest.push_back({{"name", p.name},
                        {"shape", {p.shape.n, p.shape.c, p.shape.h, p.shape.w}}});
  }
  header["params"] = std::move(manifest);
  const std::string hs = header.dump();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw ValidationError("cannot create checkpoint file: " + path);
  try {
    if (std::fwrite(kCkptMagic, 1, 4, f) != 4) throw ValidationError("checkpoint: short write");
    write_u32_le(f, kCkptVersion);
    write_u32_le(f, static_cast<std::uint32_t>(hs.size()));
    if (std::fwrite(hs.data(), 1, hs.size(), f) != hs.size())
      throw ValidationError("checkpoint: short write");
    std::vector<float> buf;
    for (std::size_t i = 0; i < ps.count(); ++i) {
      const nn::Parameter<T>& p = ps.at(i);
      buf.resize(p.value.size());
      for (std::size_t k = 0; k < buf.size(); ++k) buf[k] = static_cast<float>(p.value[k]);
      if (std::fwrite(buf.data(), sizeof(float), buf.size(), f) != buf.size())
        throw ValidationError("checkpoint: short write");
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
}

template <class T>
Denoiser<T> load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw ValidationError("cannot open checkpoint file: " + path);
  try {
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
      throw ValidationError("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32_le(f);
    if (version != kCkptVersion)
      throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t hlen = read_u32_le(f);
    if (hlen == 0 || hlen > (1u << 26)) throw ValidationError("checkpoint: bad header length");
    std::string hs(hlen, '\0');
    if (std::fread(hs.data(), 1, hlen, f) != hlen)
      throw ValidationError("checkpoint: truncated header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
    }

    Denoiser<T> model(config_from_json(header.at("config")));
    ParamStore<T>& ps = model.params();
    const auto& manifest = header.at("params");
    if (manifest.size() != ps.count())
      throw ValidationError("checkpoint: parameter manifest does not match the config");
    std::vector<float> buf;
    for (std::size_t i = 0; i < ps.count(); ++i) {
      nn::Parameter<T>& p = ps.at(i);
      const auto& entry = manifest.at(i);
      const auto shape = entry.at("shape").get<std::vector<int>>();
      if (entry.at("name").get<std::string>() != p.name || shape.size() != 4 ||
          shape[0] != p.shape.n || shape[1] != p.shape.c || shape[2] != p.shape.h ||
          shape[3] != p.shape.w)
        throw ValidationError("checkpoint: manifest mismatch at parameter " + p.name);
      buf.resize(p.value.size());
      if (std::fread(buf.data(), sizeof(float), buf.size(), f) != buf.size())
        throw ValidationError("checkpoint: truncated parameter data");
      for (std::size_t k = 0; k < buf.size(); ++k) p.value[k] = static_cast<T>(buf[k]);
    }
    std::fclose(f);
    return model;
  } catch (...) {
    std::fclose(f);
    throw;
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template void save_checkpoint<float>(const Denoiser<float>&, const std::string&);
template void save_checkpoint<double>(const Denoiser<double>&, const std::string&);
template Denoiser<float> load_checkpoint<float>(const std::string&);
template Denoiser<double> load_checkpoint<double>(const std::string&);

}  // namespace topogen
