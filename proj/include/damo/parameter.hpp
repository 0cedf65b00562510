#pragma once

#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "damo/tensor.hpp"

namespace damo {

/// Named trainable tensor. `group` drives per-stage freezing.
struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad.fill(0.0); }
};

/// Owns every parameter of a model. Addresses are stable for the lifetime
/// of the store, so modules keep plain pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(std::string name, std::string group, Tensor init);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return params_.size(); }
  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  std::vector<Parameter*> in_group(const std::string& group);
  std::set<std::string> groups() const;
  std::map<std::string, std::size_t> count_by_group() const;
  std::size_t numel() const;

  void zero_grad();
  /// Marks exactly the parameters whose group is in `groups` trainable.
  void set_trainable_groups(const std::set<std::string>& groups);
  void freeze_all();

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace damo
