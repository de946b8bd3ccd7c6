#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "himix/autodiff.hpp"
#include "himix/rng.hpp"

namespace himix {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = false;
};

/// Owns named parameters in registration order. References stay valid for
/// the store's lifetime.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  std::vector<Parameter*> trainable();

  std::size_t count_values(bool trainable_only) const;
  void freeze_all();
  /// Rounds every value to float precision, as the checkpoint stores them.
  void round_to_float();

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

/// Binds parameters into one graph. Trainable parameters become
/// gradient-tracking leaves when `track_grads` is set; everything else is a
/// constant-valued leaf.
class Binder {
 public:
  Binder(ad::Graph& g, bool track_grads) : graph_(g), track_grads_(track_grads) {}

  ad::Var operator()(const Parameter& p);
  /// Uses `v` wherever `p` is requested (gradient checks substitute leaves).
  void override_with(const Parameter& p, ad::Var v);

  ad::Graph& graph() { return graph_; }
  const std::vector<std::pair<const Parameter*, ad::Var>>& bound() const { return order_; }

 private:
  ad::Graph& graph_;
  bool track_grads_;
  std::unordered_map<const Parameter*, ad::Var> vars_;
  std::vector<std::pair<const Parameter*, ad::Var>> order_;
};

inline constexpr std::string_view kTrainablePrefix = "train:";
inline constexpr std::string_view kFrozenPrefix = "frozen:";

/// HXC1: "HXC1\n", u32 tensor count, then per tensor u32 name length, UTF-8
/// name ("train:" or "frozen:" prefix + parameter name), u32 rank, u32 dims,
/// f32 values. All integers and floats little-endian.
std::string encode_checkpoint(const ParamStore& store);
ParamStore decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Copies values from `src` into same-named, same-shaped parameters of `dst`.
/// Every parameter of `dst` must be present in `src`.
void assign_values(ParamStore& dst, const ParamStore& src);

}  // namespace himix
