#ifndef DUALFILTER_IO_H_
#define DUALFILTER_IO_H_

// Text formats: models as JSON objects, paths and tables as CSV with a header
// row. Numbers are written with 17 significant digits so that files round
// trip exactly and identical runs produce identical bytes.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dualfilter/bench.h"
#include "dualfilter/hmm.h"
#include "dualfilter/lgssm.h"

namespace dualfilter::io {

std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, const std::string& content);

std::string FormatDouble(double v);

// Keys d, m, T, tau, A (list of d x d matrices, one per lag), optional
// A_table (A_table[t-1][s-1] = A_{t,s}), C, Q, R, mu0, Sigma0. Matrices are
// arrays of rows.
lgssm::LinearGaussianModel LinearModelFromJson(const std::string& text);
std::string LinearModelToJson(const lgssm::LinearGaussianModel& model);

// Keys d, m, A, C, mu.
hmm::Hmm HmmFromJson(const std::string& text);
std::string HmmToJson(const hmm::Hmm& hmm);

// One path per row, symbols separated by commas; header t1,t2,...
std::string PathsToCsv(const std::vector<hmm::Path>& paths);
std::vector<hmm::Path> PathsFromCsv(const std::string& text);

// Columns query_step,time_index,magnitude over the lower triangle (1-based).
std::string HeatmapToCsv(const Eigen::MatrixXd& heatmap);
// Dense row-major matrix as a JSON array of rows.
std::string MatrixToJson(const Eigen::MatrixXd& M);

// Columns step,x1..xd for a d x T sequence of probability vectors.
std::string SequenceToCsv(const Eigen::MatrixXd& seq);

struct LossRow {
  std::string method;
  int d_hat = 0;
  double epsilon = 0.0;
  double loss = 0.0;
};
// Columns method,d_hat,epsilon,loss.
std::string LossesToCsv(const std::vector<LossRow>& rows);

// Columns method,d,T,seconds,bytes.
std::string BenchToCsv(const std::vector<lgssm::BenchRow>& rows);

}  // namespace dualfilter::io

#endif  // DUALFILTER_IO_H_
