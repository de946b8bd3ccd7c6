#include "himix/params.hpp"

#include <cmath>
#include <cstring>

#include "himix/image.hpp"

namespace himix {

Parameter& ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), trainable});
  return params_.back();
}

Parameter& ParamStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

const Parameter& ParamStore::get(std::string_view name) const { return const_cast<ParamStore*>(this)->get(name); }

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

std::size_t ParamStore::count_values(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!trainable_only || p.trainable) n += p.value.size();
  }
  return n;
}

void ParamStore::freeze_all() {
  for (auto& p : params_) p.trainable = false;
}

void ParamStore::round_to_float() {
  for (auto& p : params_) {
    for (double& v : p.value.data) v = static_cast<double>(static_cast<float>(v));
  }
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

ad::Var Binder::operator()(const Parameter& p) {
  auto it = vars_.find(&p);
  if (it != vars_.end()) return it->second;
  ad::Var v = graph_.leaf_ref(p.value, track_grads_ && p.trainable);
  vars_.emplace(&p, v);
  order_.emplace_back(&p, v);
  return v;
}

void Binder::override_with(const Parameter& p, ad::Var v) {
  if (v.shape() != p.value.shape) {
    throw ShapeError("override for " + p.name + ": " + shape_str(v.shape()) + " vs " + shape_str(p.value.shape));
  }
  vars_[&p] = v;
}

namespace {

constexpr std::string_view kMagic = "HXC1\n";

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  std::uint32_t u32() {
    if (pos + 4 > bytes.size()) throw TruncatedError("HXC1: truncated");
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string str(std::size_t n) {
    if (pos + n > bytes.size()) throw TruncatedError("HXC1: truncated");
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  float f32() {
    if (pos + 4 > bytes.size()) throw TruncatedError("HXC1: truncated");
    float v = 0;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
};

}  // namespace

std::string encode_checkpoint(const ParamStore& store) {
  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(store.all().size()));
  for (const auto& p : store.all()) {
    const std::string name = std::string(p.trainable ? kTrainablePrefix : kFrozenPrefix) + p.name;
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data) put_f32(out, static_cast<float>(v));
  }
  return out;
}

ParamStore decode_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw BadMagicError("HXC1: bad magic");
  Reader r{bytes, kMagic.size()};
  ParamStore store;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str(r.u32());
    bool trainable = false;
    if (name.rfind(kTrainablePrefix, 0) == 0) {
      trainable = true;
      name.erase(0, kTrainablePrefix.size());
    } else if (name.rfind(kFrozenPrefix, 0) == 0) {
      name.erase(0, kFrozenPrefix.size());
    } else {
      throw ImageFormatError("HXC1: tensor '" + name + "' lacks a train:/frozen: prefix");
    }
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    Tensor t(shape);
    for (double& v : t.data) {
      const float f = r.f32();
      if (!std::isfinite(f)) throw NonFiniteError("HXC1: non-finite value in " + name);
      v = f;
    }
    store.add(std::move(name), std::move(t), trainable);
  }
  if (r.pos != bytes.size()) throw ImageFormatError("HXC1: trailing bytes");
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  write_file(path, encode_checkpoint(store));
}

ParamStore load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void assign_values(ParamStore& dst, const ParamStore& src) {
  for (auto& p : dst.all()) {
    if (!src.contains(p.name)) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    const Parameter& s = src.get(p.name);
    if (s.value.shape != p.value.shape) {
      throw ShapeError("checkpoint parameter " + p.name + " has shape " + shape_str(s.value.shape) +
                       ", model expects " + shape_str(p.value.shape));
    }
    p.value = s.value;
    p.trainable = s.trainable;
  }
}

}  // namespace himix
