#pragma once

// TokenScorer backed by an external scoring service, so a neural pruner can
// replace the linear model without changing the pruning contract.
//
// Wire format: POST <path> {"tokens": [...]} -> {"probabilities": [...]}.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ctrlcot/pruner.hpp"

namespace ctrlcot {

class RemoteScorer final : public TokenScorer {
 public:
  RemoteScorer(std::string base_url, std::vector<TokenClass> protected_classes = {},
               Featurizer featurizer = Featurizer(), std::string path = "/score")
      : base_url_(std::move(base_url)),
        path_(std::move(path)),
        protected_classes_(std::move(protected_classes)),
        featurizer_(std::move(featurizer)) {}

  std::vector<double> keep_probabilities(const TokenizedText& t) const override {
    httplib::Client client(base_url_);
    const nlohmann::json payload{{"tokens", t.tokens}};
    auto res = client.Post(path_, payload.dump(), "application/json");
    if (!res || res->status != 200)
      throw GatewayError("remote scorer at " + base_url_ + " failed" +
                         (res ? " with HTTP " + std::to_string(res->status) : ""));
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw GatewayError(std::string("remote scorer returned malformed JSON: ") + e.what());
    }
    auto probs = body.at("probabilities").get<std::vector<double>>();
    if (probs.size() != t.tokens.size())
      throw GatewayError("remote scorer returned " + std::to_string(probs.size()) +
                         " probabilities for " + std::to_string(t.tokens.size()) + " tokens");
    for (double& p : probs) p = std::min(1.0 - 1e-12, std::max(1e-12, p));
    return probs;
  }

  std::vector<bool> protected_mask(const TokenizedText& t) const override {
    std::vector<bool> mask(t.tokens.size(), false);
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      const TokenClass cls = featurizer_.classify(t.tokens[i]);
      for (TokenClass p : protected_classes_) {
        if (cls == p) {
          mask[i] = true;
          break;
        }
      }
    }
    return mask;
  }

 private:
  std::string base_url_;
  std::string path_;
  std::vector<TokenClass> protected_classes_;
  Featurizer featurizer_;
};

}  // namespace ctrlcot
