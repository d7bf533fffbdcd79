#pragma once

#include <string>
#include <vector>

#include "deskagent/observer/messages.hpp"

namespace deskagent::obs {

class ScriptMismatch : public ObserverError {
 public:
  using ObserverError::ObserverError;
};

// Replays a fixed sequence of verdicts in order.
class ScriptedObserver : public Observer {
 public:
  explicit ScriptedObserver(std::vector<ObserverVerdict> script) : script_(std::move(script)) {}

  std::string name() const override { return "scripted"; }

  ObserverVerdict query(const ObserverRequest& req) override {
    req.validate();
    if (next_ >= script_.size())
      throw ScriptMismatch("script exhausted after " + std::to_string(script_.size()) + " verdicts");
    const auto& v = script_[next_];
    if (v.kind() != req.kind)
      throw ScriptMismatch("verdict " + std::to_string(next_) + " answers " + to_string(v.kind()) + ", request is " +
                           to_string(req.kind));
    ++next_;
    return v;
  }

  std::size_t consumed() const noexcept { return next_; }
  std::size_t size() const noexcept { return script_.size(); }

 private:
  std::vector<ObserverVerdict> script_;
  std::size_t next_ = 0;
};

}  // namespace deskagent::obs
