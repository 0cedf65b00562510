#include "damo/parameter.hpp"

namespace damo {

Parameter& ParameterStore::add(std::string name, std::string group, Tensor init) {
  if (name.empty()) throw ContractViolation("parameter name must be nonempty");
  if (group.empty()) throw ContractViolation("parameter '" + name + "' needs a group tag");
  if (index_.contains(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Tensor grad(init.shape());
  params_.push_back(Parameter{std::move(name), std::move(group), std::move(init), std::move(grad), true});
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return params_[it->second];
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::vector<Parameter*> ParameterStore::in_group(const std::string& group) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p.group == group) out.push_back(&p);
  return out;
}

std::set<std::string> ParameterStore::groups() const {
  std::set<std::string> out;
  for (const auto& p : params_) out.insert(p.group);
  return out;
}

std::map<std::string, std::size_t> ParameterStore::count_by_group() const {
  std::map<std::string, std::size_t> out;
  for (const auto& p : params_) out[p.group] += p.value.size();
  return out;
}

std::size_t ParameterStore::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParameterStore::set_trainable_groups(const std::set<std::string>& groups) {
  for (auto& p : params_) p.trainable = groups.contains(p.group);
}

void ParameterStore::freeze_all() {
  for (auto& p : params_) p.trainable = false;
}

}  // namespace damo
