#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "esrm/types.hpp"

namespace esrm {

/// One subject of a recurrent-event study: follow-up T = min(death, censoring),
/// the terminal-event indicator, the observed recurrence times and the
/// time-fixed covariate vector.
struct SubjectRecord {
  std::string id;
  double follow_up = 0.0;
  bool terminal = false;
  std::vector<double> event_times;  // strictly increasing, in (0, follow_up]
  Eigen::VectorXd covariates;
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  int p = 0;                        // covariate dimension
  int B = 1;                        // number of modeled event strata
  double tau = 0.0;                 // observation horizon, >= max follow-up
  std::vector<std::string> covariate_names;
  long dropped_events = 0;          // events beyond the B-th dropped at ingestion

  int n() const { return static_cast<int>(subjects.size()); }
  void validate() const;            // throws std::invalid_argument on violation
};

/// At-risk evaluation with the left-limit convention: the subject is at risk
/// for its s-th event at time t iff t <= follow_up and exactly s-1 events
/// occurred strictly before t. Returns s in 1..B, 0 when the subject has
/// exited the modeled strata (>= B prior events), -1 when t > follow_up.
int at_risk_stratum(const SubjectRecord& subj, double t, int B);

/// Events sharing a time also share the risk set (Breslow handling of ties).
struct EventBlock {
  double time = 0.0;
  std::vector<int> cases;  // subjects with an event exactly at `time`
  std::vector<int> risk;   // subjects at risk at `time`, left-limit convention
};

/// Half-open in measure, point-closed on the right for risk evaluation:
/// the subject is at risk on (start, end], and intervals have positive length.
struct RiskInterval {
  int subject = -1;
  double start = 0.0;
  double end = 0.0;
};

struct StratumDesign {
  std::vector<EventBlock> blocks;       // sorted by event time
  std::vector<RiskInterval> intervals;  // at most one per subject
  long event_count = 0;
  bool empty = true;                    // no positive-length exposure
};

/// Per-stratum risk structure plus the pooled (unstratified) one. Covariates
/// and follow-up times are cached here so fitters only need the design.
/// Immutable after construction; safe to share across threads.
struct StratifiedDesign {
  int n = 0;
  int p = 0;
  int B = 1;
  double tau = 0.0;
  Eigen::MatrixXd X;                  // n x p
  std::vector<double> follow_up;      // T_i
  std::vector<StratumDesign> strata;  // strata[s-1] = risk structure for the s-th event
  StratumDesign pooled;               // Y_i(t) = 1{T_i >= t}, all modeled events pooled
};

/// Stratum s is the risk layer for the s-th event: subject i is at risk there
/// on (t_{i,s-1}, min(t_{i,s}, T_i)] with t_{i,0} = 0, and its s-th event is
/// the single event counted in stratum s. Events beyond the B-th are ignored
/// and the subject exits all modeled risk sets after its B-th event.
StratifiedDesign build_design(const Dataset& data);

/// Long counting-process format: header `id,tstart,tstop,event,terminal,x1,...,xp`.
/// Intervals partition (0, T_i] per subject, event=1 marks a recurrence at tstop,
/// terminal may be 1 only on the subject's last interval. Events beyond the
/// B-th per subject are dropped and counted in Dataset::dropped_events.
Dataset load_long_csv(const std::string& path, int B);
Dataset load_long_csv_stream(std::istream& in, int B);

/// Wide one-row-per-subject format:
/// `id,pyridoxine,thiotepa,number,size,futime,status,r1,...,rK`
/// with blank recurrence cells meaning "no further recurrence".
Dataset load_wide_recurrences(const std::string& path, int B);
Dataset load_wide_recurrences_stream(std::istream& in, int B);

void write_long_csv(const Dataset& data, const std::string& path);
void write_long_csv_stream(const Dataset& data, std::ostream& out);

}  // namespace esrm
