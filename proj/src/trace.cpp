#include "dvr/trace.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace dvr {

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void Trace::write_csv(std::ostream& out) const {
  out << "iter,sim_time,n_grads,n_comms,subopt_node0,mean_sq_dist,consensus_gap";
  if (catalyst_columns) out << ",outer_iter,beta,q";
  out << ",algorithm\n";
  for (const auto& r : rows) {
    out << r.iter << ',' << fmt_double(r.sim_time) << ',' << r.n_grads << ',' << r.n_comms << ','
        << fmt_double(r.subopt_node0) << ',' << fmt_double(r.mean_sq_dist) << ','
        << fmt_double(r.consensus_gap);
    if (catalyst_columns) out << ',' << r.outer_iter << ',' << fmt_double(r.beta) << ',' << fmt_double(r.q);
    out << ',' << algorithm << '\n';
  }
}

void Trace::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace '" + path + "'");
  write_csv(out);
}

const TraceRow* Trace::first_below(double target) const {
  for (const auto& r : rows)
    if (r.subopt_node0 <= target) return &r;
  return nullptr;
}

double consensus_gap(const Mat& theta) {
  Eigen::RowVectorXd mean = theta.colwise().mean();
  double gap = 0.0;
  for (Eigen::Index i = 0; i < theta.rows(); ++i) gap = std::max(gap, (theta.row(i) - mean).norm());
  return gap;
}

Recorder::Recorder(const Problem& problem, const Reference* ref, const Budget& budget,
                   const TraceOptions& options, Trace& trace)
    : problem_(problem), ref_(ref), budget_(budget), options_(options), trace_(trace) {
  if (budget.empty()) throw ValidationError("budget must set at least one limit");
  if (budget.target_suboptimality && !ref)
    throw ValidationError("a target suboptimality needs a reference solution");
  cadence_ = options.cadence > 0
                 ? options.cadence
                 : static_cast<std::int64_t>(std::ceil((problem.m + problem.kappa_s) / 20.0));
  if (cadence_ < 1) cadence_ = 1;
}

bool Recorder::budget_reached(const Clock& clock, double subopt) const {
  if (budget_.max_iterations && clock.iter >= *budget_.max_iterations) return true;
  if (budget_.max_sim_time && clock.sim_time() >= *budget_.max_sim_time) return true;
  if (budget_.target_suboptimality && subopt <= *budget_.target_suboptimality) return true;
  return false;
}

bool Recorder::observe(const Clock& clock, const Mat& theta, bool communicated, bool force) {
  bool hard_stop = (budget_.max_iterations && clock.iter >= *budget_.max_iterations) ||
                   (budget_.max_sim_time && clock.sim_time() >= *budget_.max_sim_time);
  bool due = force || hard_stop || clock.iter % cadence_ == 0 || (communicated && options_.every_comm);
  if (!due || clock.iter == last_iter_) return hard_stop;
  last_iter_ = clock.iter;

  TraceRow row;
  row.iter = clock.iter;
  row.sim_time = clock.sim_time();
  row.n_grads = clock.n_grads;
  row.n_comms = clock.n_comms;
  row.consensus_gap = consensus_gap(theta);
  row.outer_iter = outer_iter;
  row.beta = beta;
  row.q = q;
  if (ref_) {
    row.subopt_node0 = problem_.objective(theta.row(0).transpose()) - ref_->f_star;
    double s = 0.0;
    for (Eigen::Index i = 0; i < theta.rows(); ++i) s += (theta.row(i).transpose() - ref_->theta_star).squaredNorm();
    row.mean_sq_dist = s / static_cast<double>(theta.rows());
  }
  bool stop = budget_reached(clock, row.subopt_node0);
  if (trace_.rows.size() < options_.max_rows || stop) trace_.rows.push_back(row);
  return stop;
}

}  // namespace dvr
