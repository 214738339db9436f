#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrcpi/errors.hpp"
#include "vrcpi/mdp.hpp"

namespace vrcpi {

using json = nlohmann::json;

namespace detail {

inline const json& field(const json& doc, const char* key) {
  if (!doc.is_object()) throw SchemaError("expected a JSON object");
  auto it = doc.find(key);
  if (it == doc.end()) throw SchemaError(std::string("missing field '") + key + "'");
  return *it;
}

inline double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw SchemaError(where + ": expected a number");
  return v.get<double>();
}

inline std::size_t count(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 1)
    throw SchemaError(where + ": expected a positive integer");
  return v.get<std::size_t>();
}

inline Vector vector_field(const json& v, std::size_t n, const std::string& where) {
  if (!v.is_array() || v.size() != n)
    throw SchemaError(where + ": expected an array of length " + std::to_string(n));
  Vector out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    out(static_cast<Eigen::Index>(i)) = number(v[i], where + "[" + std::to_string(i) + "]");
  return out;
}

inline ScoreMatrix matrix_field(const json& v, std::size_t rows, std::size_t cols,
                                const std::string& where) {
  if (!v.is_array() || v.size() != rows)
    throw SchemaError(where + ": expected " + std::to_string(rows) + " rows");
  ScoreMatrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const auto w = where + "[" + std::to_string(i) + "]";
    out.row(static_cast<Eigen::Index>(i)) = vector_field(v[i], cols, w).transpose();
  }
  return out;
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

inline void write_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << doc.dump(2) << '\n';
}

}  // namespace detail

/// MDP document: transition is indexed [next][s][a].
inline json mdp_to_json(const TabularMdp& mdp) {
  const auto S = mdp.num_states();
  const auto A = mdp.num_actions();
  json trans = json::array();
  for (std::size_t n = 0; n < S; ++n) {
    json per_state = json::array();
    for (std::size_t s = 0; s < S; ++s) {
      json per_action = json::array();
      for (std::size_t a = 0; a < A; ++a) per_action.push_back(mdp.prob(n, s, a));
      per_state.push_back(std::move(per_action));
    }
    trans.push_back(std::move(per_state));
  }
  return json{{"num_states", S},
              {"num_actions", A},
              {"discount", mdp.discount()},
              {"transition", std::move(trans)},
              {"reward", detail::matrix_json(mdp.reward())},
              {"rho", detail::vector_json(mdp.rho())},
              {"mu", detail::vector_json(mdp.mu())}};
}

inline TabularMdp mdp_from_json(const json& doc) {
  using namespace detail;
  const auto S = count(field(doc, "num_states"), "num_states");
  const auto A = count(field(doc, "num_actions"), "num_actions");
  const double gamma = number(field(doc, "discount"), "discount");
  const json& tr = field(doc, "transition");
  if (!tr.is_array() || tr.size() != S) throw SchemaError("transition: expected S outer entries");
  Eigen::MatrixXd trans(static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S));
  for (std::size_t n = 0; n < S; ++n) {
    const auto block =
        matrix_field(tr[n], S, A, "transition[" + std::to_string(n) + "]");
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a)
        trans(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(n)) =
            block(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  auto reward = matrix_field(field(doc, "reward"), S, A, "reward");
  auto rho = vector_field(field(doc, "rho"), S, "rho");
  std::optional<Vector> mu;
  if (doc.contains("mu") && !doc["mu"].is_null()) mu = vector_field(doc["mu"], S, "mu");
  return TabularMdp(std::move(trans), std::move(reward), gamma, std::move(rho), std::move(mu));
}

inline TabularMdp load_mdp(const std::string& path) { return mdp_from_json(detail::read_file(path)); }
inline void save_mdp(const TabularMdp& mdp, const std::string& path) {
  detail::write_file(path, mdp_to_json(mdp));
}

inline json policy_to_json(const Policy& p) { return json{{"probs", detail::matrix_json(p.matrix())}}; }

inline Policy policy_from_json(const json& doc) {
  const json& probs = detail::field(doc, "probs");
  if (!probs.is_array() || probs.empty() || !probs[0].is_array() || probs[0].empty())
    throw SchemaError("probs: expected a non-empty matrix");
  return Policy(detail::matrix_field(probs, probs.size(), probs[0].size(), "probs"));
}

inline Policy load_policy(const std::string& path) { return policy_from_json(detail::read_file(path)); }
inline void save_policy(const Policy& p, const std::string& path) {
  detail::write_file(path, policy_to_json(p));
}

/// Class file: {"members": [<policy>, ...]}.
inline PolicyClass policy_class_from_json(const json& doc) {
  const json& members = detail::field(doc, "members");
  if (!members.is_array() || members.empty()) throw SchemaError("members: expected a non-empty array");
  std::vector<Policy> out;
  out.reserve(members.size());
  for (const auto& m : members) out.push_back(policy_from_json(m));
  return PolicyClass::explicit_members(std::move(out));
}

inline PolicyClass load_policy_class(const std::string& path) {
  return policy_class_from_json(detail::read_file(path));
}

}  // namespace vrcpi
