#include <fstream>

#include <json.hpp>

#include "hdfa/estimator.hpp"

namespace hdfa {

namespace {

using nlohmann::json;

json dense_to_json(const DenseLayer<double>& l) {
  json w = json::array();
  for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j) row.push_back(l.weight(i, j));
    w.push_back(std::move(row));
  }
  json b = json::array();
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) b.push_back(l.bias[i]);
  return json{{"weight", std::move(w)},
              {"bias", std::move(b)},
              {"activation", l.activation == Activation::kTanh ? "tanh" : "identity"}};
}

void dense_from_json(const json& j, DenseLayer<double>& l) {
  const auto& w = j.at("weight");
  const auto& b = j.at("bias");
  if (w.size() != static_cast<std::size_t>(l.weight.rows()) ||
      b.size() != static_cast<std::size_t>(l.bias.size())) {
    throw std::invalid_argument("checkpoint: layer shape mismatch");
  }
  for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
    const auto& row = w.at(static_cast<std::size_t>(i));
    if (row.size() != static_cast<std::size_t>(l.weight.cols())) {
      throw std::invalid_argument("checkpoint: layer shape mismatch");
    }
    for (Eigen::Index k = 0; k < l.weight.cols(); ++k) {
      l.weight(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
  }
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
    l.bias[i] = b.at(static_cast<std::size_t>(i)).get<double>();
  }
  const std::string act = j.at("activation").get<std::string>();
  l.activation = act == "tanh" ? Activation::kTanh : Activation::kIdentity;
}

json net_to_json(const GradientFlowNet<double>& n) {
  return json{{"f1", dense_to_json(n.embed)},
              {"f2", json{{"query", dense_to_json(n.interact.query)},
                          {"key", dense_to_json(n.interact.key)},
                          {"value", dense_to_json(n.interact.value)}}},
              {"f3", dense_to_json(n.output)}};
}

void net_from_json(const json& j, GradientFlowNet<double>& n) {
  dense_from_json(j.at("f1"), n.embed);
  dense_from_json(j.at("f2").at("query"), n.interact.query);
  dense_from_json(j.at("f2").at("key"), n.interact.key);
  dense_from_json(j.at("f2").at("value"), n.interact.value);
  dense_from_json(j.at("f3"), n.output);
}

constexpr int kFormatVersion = 1;

}  // namespace

void save_bank(const EstimatorBank<double>& bank, const std::string& path) {
  json doc{{"format_version", kFormatVersion},
           {"dim", bank.dim},
           {"hidden", bank.hidden},
           {"horizon", bank.horizon},
           {"steps", bank.steps},
           {"c0", bank.c0},
           {"networks", json{{"curvature", net_to_json(bank.curvature_flow)},
                             {"mean", net_to_json(bank.mean_flow)},
                             {"scale", net_to_json(bank.scale_flow)},
                             {"prototype_delta", net_to_json(bank.proto_delta_flow)},
                             {"mean_delta", net_to_json(bank.mean_delta_flow)},
                             {"scale_delta", net_to_json(bank.scale_delta_flow)}}}};
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::invalid_argument("save_bank: cannot open " + path);
  }
  out << doc.dump(2) << "\n";
}

EstimatorBank<double> load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::invalid_argument("load_bank: cannot open " + path);
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::invalid_argument("load_bank: malformed checkpoint: " +
                                std::string(e.what()));
  }
  if (doc.at("format_version").get<int>() != kFormatVersion) {
    throw std::invalid_argument("load_bank: unsupported format version");
  }
  EstimatorBank<double> bank = make_bank<double>(
      doc.at("dim").get<Eigen::Index>(), doc.at("hidden").get<Eigen::Index>(),
      doc.at("horizon").get<double>(), doc.at("steps").get<int>(),
      doc.at("c0").get<double>(), 0);
  const auto& nets = doc.at("networks");
  net_from_json(nets.at("curvature"), bank.curvature_flow);
  net_from_json(nets.at("mean"), bank.mean_flow);
  net_from_json(nets.at("scale"), bank.scale_flow);
  net_from_json(nets.at("prototype_delta"), bank.proto_delta_flow);
  net_from_json(nets.at("mean_delta"), bank.mean_delta_flow);
  net_from_json(nets.at("scale_delta"), bank.scale_delta_flow);
  return bank;
}

}  // namespace hdfa
