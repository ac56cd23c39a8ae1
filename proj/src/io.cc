#include "dualfilter/io.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dualfilter/errors.h"
#include "json.hpp"

namespace dualfilter::io {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

json Parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ArgumentError(std::string("invalid JSON: ") + e.what());
  }
}

template <typename T>
T Get(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ArgumentError(std::string("missing key '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("bad value for '") + key + "': " + e.what());
  }
}

MatrixXd ToMatrix(const json& j, const char* name) {
  if (!j.is_array()) throw ArgumentError(std::string(name) + " is not an array");
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index c = r ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != c) {
      throw ArgumentError(std::string(name) + " has ragged rows");
    }
    for (Eigen::Index k = 0; k < c; ++k) M(i, k) = rows[i][k];
  }
  return M;
}

VectorXd ToVector(const json& j, const char* name) {
  if (!j.is_array()) throw ArgumentError(std::string(name) + " is not an array");
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json FromMatrix(const MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
    rows.push_back(row);
  }
  return rows;
}

json FromVector(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

}  // namespace

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ArgumentError("write to '" + path + "' failed");
}

std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

lgssm::LinearGaussianModel LinearModelFromJson(const std::string& text) {
  const json j = Parse(text);
  lgssm::LinearGaussianModel model;
  model.d = Get<int>(j, "d");
  model.m = Get<int>(j, "m");
  model.T = Get<int>(j, "T");
  model.tau = Get<int>(j, "tau");
  if (j.contains("A_table")) {
    for (const json& row : j.at("A_table")) {
      std::vector<MatrixXd> lags;
      for (const json& a : row) lags.push_back(ToMatrix(a, "A_table"));
      model.table.push_back(std::move(lags));
    }
  } else {
    for (const json& a : j.at("A")) model.lags.push_back(ToMatrix(a, "A"));
  }
  model.C = ToMatrix(j.at("C"), "C");
  model.Q = ToMatrix(j.at("Q"), "Q");
  model.R = ToMatrix(j.at("R"), "R");
  model.mu0 = ToVector(j.at("mu0"), "mu0");
  model.Sigma0 = ToMatrix(j.at("Sigma0"), "Sigma0");
  model.Validate();
  return model;
}

std::string LinearModelToJson(const lgssm::LinearGaussianModel& model) {
  json j;
  j["d"] = model.d;
  j["m"] = model.m;
  j["T"] = model.T;
  j["tau"] = model.tau;
  if (model.time_varying()) {
    json table = json::array();
    for (const auto& row : model.table) {
      json lags = json::array();
      for (const MatrixXd& a : row) lags.push_back(FromMatrix(a));
      table.push_back(lags);
    }
    j["A_table"] = table;
  } else {
    json lags = json::array();
    for (const MatrixXd& a : model.lags) lags.push_back(FromMatrix(a));
    j["A"] = lags;
  }
  j["C"] = FromMatrix(model.C);
  j["Q"] = FromMatrix(model.Q);
  j["R"] = FromMatrix(model.R);
  j["mu0"] = FromVector(model.mu0);
  j["Sigma0"] = FromMatrix(model.Sigma0);
  return j.dump(2);
}

hmm::Hmm HmmFromJson(const std::string& text) {
  const json j = Parse(text);
  hmm::Hmm h;
  h.d = Get<int>(j, "d");
  h.m = Get<int>(j, "m");
  h.A = ToMatrix(j.at("A"), "A");
  h.C = ToMatrix(j.at("C"), "C");
  h.mu = ToVector(j.at("mu"), "mu");
  h.Validate();
  return h;
}

std::string HmmToJson(const hmm::Hmm& h) {
  json j;
  j["d"] = h.d;
  j["m"] = h.m;
  j["A"] = FromMatrix(h.A);
  j["C"] = FromMatrix(h.C);
  j["mu"] = FromVector(h.mu);
  return j.dump(2);
}

std::string PathsToCsv(const std::vector<hmm::Path>& paths) {
  std::ostringstream out;
  const std::size_t T = paths.empty() ? 0 : paths[0].size();
  for (std::size_t t = 0; t < T; ++t) out << (t ? "," : "") << 't' << t + 1;
  out << '\n';
  for (const hmm::Path& p : paths) {
    for (std::size_t t = 0; t < p.size(); ++t) out << (t ? "," : "") << p[t];
    out << '\n';
  }
  return out.str();
}

std::vector<hmm::Path> PathsFromCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<hmm::Path> paths;
  if (!std::getline(in, line)) return paths;  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    hmm::Path p;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        p.push_back(std::stoi(cell));
      } catch (const std::exception&) {
        throw ArgumentError("non-integer symbol '" + cell + "' in path CSV");
      }
    }
    paths.push_back(std::move(p));
  }
  return paths;
}

std::string HeatmapToCsv(const MatrixXd& heatmap) {
  std::ostringstream out;
  out << "query_step,time_index,magnitude\n";
  for (Eigen::Index s = 0; s < heatmap.rows(); ++s) {
    for (Eigen::Index t = 0; t <= s && t < heatmap.cols(); ++t) {
      out << s + 1 << ',' << t + 1 << ',' << FormatDouble(heatmap(s, t)) << '\n';
    }
  }
  return out.str();
}

std::string MatrixToJson(const MatrixXd& M) {
  std::ostringstream out;
  out << '[';
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    out << (i ? ",\n [" : "[");
    for (Eigen::Index k = 0; k < M.cols(); ++k) {
      out << (k ? "," : "") << FormatDouble(M(i, k));
    }
    out << ']';
  }
  out << "]\n";
  return out.str();
}

std::string SequenceToCsv(const MatrixXd& seq) {
  std::ostringstream out;
  out << "step";
  for (Eigen::Index x = 0; x < seq.rows(); ++x) out << ",x" << x + 1;
  out << '\n';
  for (Eigen::Index s = 0; s < seq.cols(); ++s) {
    out << s + 1;
    for (Eigen::Index x = 0; x < seq.rows(); ++x) {
      out << ',' << FormatDouble(seq(x, s));
    }
    out << '\n';
  }
  return out.str();
}

std::string LossesToCsv(const std::vector<LossRow>& rows) {
  std::ostringstream out;
  out << "method,d_hat,epsilon,loss\n";
  for (const LossRow& r : rows) {
    out << r.method << ',' << r.d_hat << ',' << FormatDouble(r.epsilon) << ','
        << FormatDouble(r.loss) << '\n';
  }
  return out.str();
}

std::string BenchToCsv(const std::vector<lgssm::BenchRow>& rows) {
  std::ostringstream out;
  out << "method,d,T,seconds,bytes\n";
  for (const lgssm::BenchRow& r : rows) {
    out << r.method << ',' << r.d << ',' << r.T << ','
        << FormatDouble(r.seconds) << ',' << r.bytes << '\n';
  }
  return out.str();
}

}  // namespace dualfilter::io
