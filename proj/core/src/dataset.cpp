#include "esrm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace esrm {

std::string to_string(ModelKind m) {
  return m == ModelKind::multiplicative ? "mult" : "add";
}

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::unconstrained: return "unconstrained";
    case EstimatorKind::constant: return "constant";
    case EstimatorKind::tv: return "tv";
    case EstimatorKind::tv_two_step: return "tv2";
  }
  return "?";
}

ModelKind parse_model(const std::string& s) {
  if (s == "mult" || s == "multiplicative") return ModelKind::multiplicative;
  if (s == "add" || s == "additive") return ModelKind::additive;
  throw std::invalid_argument("unknown model kind: " + s);
}

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "unconstrained") return EstimatorKind::unconstrained;
  if (s == "constant") return EstimatorKind::constant;
  if (s == "tv") return EstimatorKind::tv;
  if (s == "tv2" || s == "tv_two_step") return EstimatorKind::tv_two_step;
  throw std::invalid_argument("unknown estimator kind: " + s);
}

void Dataset::validate() const {
  if (subjects.empty()) throw std::invalid_argument("dataset has no subjects");
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  double max_T = 0.0;
  for (const auto& s : subjects) {
    if (!(s.follow_up > 0.0) || !std::isfinite(s.follow_up))
      throw std::invalid_argument("subject " + s.id + ": follow-up must be finite and positive");
    if (s.covariates.size() != p)
      throw std::invalid_argument("subject " + s.id + ": covariate dimension mismatch");
    if (!s.covariates.allFinite())
      throw std::invalid_argument("subject " + s.id + ": non-finite covariate");
    double prev = 0.0;
    for (double t : s.event_times) {
      if (!(t > prev))
        throw std::invalid_argument("subject " + s.id + ": event times not strictly increasing");
      if (t > s.follow_up)
        throw std::invalid_argument("subject " + s.id + ": event after follow-up");
      prev = t;
    }
    max_T = std::max(max_T, s.follow_up);
  }
  if (tau < max_T) throw std::invalid_argument("tau smaller than maximal follow-up");
}

int at_risk_stratum(const SubjectRecord& subj, double t, int B) {
  if (t > subj.follow_up) return -1;
  int before = 0;  // N(t-) with events capped at B
  for (double e : subj.event_times) {
    if (e < t) ++before;
    else break;
  }
  if (before >= B) return 0;
  return before + 1;
}

namespace {

// Capped event times used for stratification: the first min(K, B).
int capped_count(const SubjectRecord& s, int B) {
  return static_cast<int>(std::min<size_t>(s.event_times.size(), static_cast<size_t>(B)));
}

void finalize_stratum(StratumDesign& st, const std::vector<std::pair<double, int>>& events) {
  st.empty = st.intervals.empty();
  st.event_count = static_cast<long>(events.size());
  if (events.empty()) return;
  std::vector<std::pair<double, int>> sorted = events;
  std::sort(sorted.begin(), sorted.end());
  // group ties into blocks and attach the risk set at each distinct time
  size_t k = 0;
  while (k < sorted.size()) {
    EventBlock blk;
    blk.time = sorted[k].first;
    while (k < sorted.size() && sorted[k].first == blk.time) {
      blk.cases.push_back(sorted[k].second);
      ++k;
    }
    for (const auto& iv : st.intervals) {
      if (iv.start < blk.time && blk.time <= iv.end) blk.risk.push_back(iv.subject);
    }
    st.blocks.push_back(std::move(blk));
  }
}

}  // namespace

StratifiedDesign build_design(const Dataset& data) {
  data.validate();
  StratifiedDesign d;
  d.n = data.n();
  d.p = data.p;
  d.B = data.B;
  d.tau = data.tau;
  d.X.resize(d.n, d.p);
  d.follow_up.resize(d.n);
  for (int i = 0; i < d.n; ++i) {
    d.X.row(i) = data.subjects[i].covariates.transpose();
    d.follow_up[i] = data.subjects[i].follow_up;
  }

  d.strata.assign(d.B, StratumDesign{});
  std::vector<std::vector<std::pair<double, int>>> events(d.B);
  std::vector<std::pair<double, int>> pooled_events;

  for (int i = 0; i < d.n; ++i) {
    const auto& subj = data.subjects[i];
    const int K = capped_count(subj, d.B);
    double prev = 0.0;
    for (int s = 1; s <= d.B; ++s) {
      if (s <= K) {
        const double t = subj.event_times[s - 1];
        d.strata[s - 1].intervals.push_back({i, prev, t});
        events[s - 1].emplace_back(t, i);
        pooled_events.emplace_back(t, i);
        prev = t;
      } else if (s == K + 1 && subj.follow_up > prev) {
        d.strata[s - 1].intervals.push_back({i, prev, subj.follow_up});
        break;
      } else {
        break;
      }
    }
    d.pooled.intervals.push_back({i, 0.0, subj.follow_up});
  }

  for (int s = 0; s < d.B; ++s) finalize_stratum(d.strata[s], events[s]);
  finalize_stratum(d.pooled, pooled_events);
  return d;
}

// ---------------------------------------------------------------------------
// CSV handling
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_num(const std::string& tok, long line, const char* what) {
  if (tok.empty()) throw ParseError(std::string("empty ") + what + " field", line);
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || !std::isfinite(v))
    throw ParseError(std::string("malformed ") + what + " value '" + tok + "'", line);
  return v;
}

int parse_flag(const std::string& tok, long line, const char* what) {
  if (tok == "0") return 0;
  if (tok == "1") return 1;
  throw ParseError(std::string(what) + " must be 0 or 1, got '" + tok + "'", line);
}

void cap_events(SubjectRecord& subj, int B, long& dropped) {
  if (static_cast<int>(subj.event_times.size()) > B) {
    dropped += static_cast<long>(subj.event_times.size()) - B;
    subj.event_times.resize(B);
  }
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Dataset load_long_csv_stream(std::istream& in, int B) {
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  std::string line;
  long lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty file");
  ++lineno;
  auto header = split_csv(line);
  const std::vector<std::string> fixed = {"id", "tstart", "tstop", "event", "terminal"};
  if (header.size() < fixed.size() + 1)
    throw ParseError("header must be id,tstart,tstop,event,terminal,x1,...,xp", lineno);
  for (size_t k = 0; k < fixed.size(); ++k)
    if (header[k] != fixed[k])
      throw ParseError("unexpected header column '" + header[k] + "', expected '" + fixed[k] + "'",
                       lineno);
  const int p = static_cast<int>(header.size() - fixed.size());
  for (int j = 0; j < p; ++j)
    if (header[fixed.size() + j] != "x" + std::to_string(j + 1))
      throw ParseError("covariate columns must be named x1..xp", lineno);

  Dataset data;
  data.p = p;
  data.B = B;
  data.covariate_names.assign(header.begin() + fixed.size(), header.end());

  SubjectRecord cur;
  bool have_cur = false;
  double prev_stop = 0.0;
  bool terminal_seen = false;
  std::vector<std::string> seen_ids;

  auto flush = [&]() {
    if (!have_cur) return;
    cur.follow_up = prev_stop;
    cur.terminal = terminal_seen;
    cap_events(cur, B, data.dropped_events);
    data.subjects.push_back(cur);
    seen_ids.push_back(cur.id);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto tok = split_csv(line);
    if (static_cast<int>(tok.size()) != 5 + p)
      throw ParseError("expected " + std::to_string(5 + p) + " fields, got " +
                           std::to_string(tok.size()) + " (inconsistent covariate count?)",
                       lineno);
    const std::string& id = tok[0];
    const double tstart = parse_num(tok[1], lineno, "tstart");
    const double tstop = parse_num(tok[2], lineno, "tstop");
    const int event = parse_flag(tok[3], lineno, "event");
    const int terminal = parse_flag(tok[4], lineno, "terminal");
    Eigen::VectorXd x(p);
    for (int j = 0; j < p; ++j) x[j] = parse_num(tok[5 + j], lineno, "covariate");

    if (!have_cur || id != cur.id) {
      flush();
      if (std::find(seen_ids.begin(), seen_ids.end(), id) != seen_ids.end())
        throw ParseError("rows of subject '" + id + "' must be contiguous", lineno);
      cur = SubjectRecord{};
      cur.id = id;
      cur.covariates = x;
      have_cur = true;
      prev_stop = 0.0;
      terminal_seen = false;
      if (tstart != 0.0)
        throw ParseError("first interval of subject '" + id + "' must start at 0", lineno);
    } else {
      if (terminal_seen)
        throw ParseError("terminal flag set before the last interval of subject '" + id + "'",
                         lineno);
      if (tstart != prev_stop)
        throw ParseError("intervals of subject '" + id + "' must be contiguous", lineno);
      if ((cur.covariates - x).cwiseAbs().maxCoeff() != 0.0)
        throw ParseError("covariates change within subject '" + id +
                             "' (time-varying covariates not supported)",
                         lineno);
    }
    if (!(tstop > tstart))
      throw ParseError("non-increasing interval (tstop <= tstart) for subject '" + id + "'",
                       lineno);
    if (tstart < 0.0) throw ParseError("negative tstart", lineno);
    if (event == 1) cur.event_times.push_back(tstop);
    if (terminal == 1) terminal_seen = true;
    prev_stop = tstop;
  }
  flush();
  if (data.subjects.empty()) throw ParseError("no data rows");
  double max_T = 0.0;
  for (const auto& s : data.subjects) max_T = std::max(max_T, s.follow_up);
  data.tau = max_T;
  data.validate();
  return data;
}

Dataset load_long_csv(const std::string& path, int B) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  return load_long_csv_stream(in, B);
}

Dataset load_wide_recurrences_stream(std::istream& in, int B) {
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  std::string line;
  long lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty file");
  ++lineno;
  auto header = split_csv(line);
  const std::vector<std::string> fixed = {"id",   "pyridoxine", "thiotepa", "number",
                                          "size", "futime",     "status"};
  if (header.size() < fixed.size())
    throw ParseError("header must be id,pyridoxine,thiotepa,number,size,futime,status,r1,...",
                     lineno);
  for (size_t k = 0; k < fixed.size(); ++k)
    if (header[k] != fixed[k])
      throw ParseError("unexpected header column '" + header[k] + "', expected '" + fixed[k] + "'",
                       lineno);
  const int K = static_cast<int>(header.size() - fixed.size());
  for (int k = 0; k < K; ++k)
    if (header[fixed.size() + k] != "r" + std::to_string(k + 1))
      throw ParseError("recurrence columns must be named r1..rK", lineno);

  Dataset data;
  data.p = 4;
  data.B = B;
  data.covariate_names = {"pyridoxine", "thiotepa", "number", "size"};

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto tok = split_csv(line);
    if (static_cast<int>(tok.size()) != 7 + K)
      throw ParseError("expected " + std::to_string(7 + K) + " fields, got " +
                           std::to_string(tok.size()),
                       lineno);
    SubjectRecord subj;
    subj.id = tok[0];
    subj.covariates.resize(4);
    subj.covariates[0] = parse_num(tok[1], lineno, "pyridoxine");
    subj.covariates[1] = parse_num(tok[2], lineno, "thiotepa");
    subj.covariates[2] = parse_num(tok[3], lineno, "number");
    subj.covariates[3] = parse_num(tok[4], lineno, "size");
    subj.follow_up = parse_num(tok[5], lineno, "futime");
    subj.terminal = parse_flag(tok[6], lineno, "status") == 1;
    if (!(subj.follow_up > 0.0)) throw ParseError("futime must be positive", lineno);
    bool blank_seen = false;
    double prev = 0.0;
    for (int k = 0; k < K; ++k) {
      const std::string& cell = tok[7 + k];
      if (cell.empty()) {
        blank_seen = true;
        continue;
      }
      if (blank_seen)
        throw ParseError("recurrence time after a blank cell in r" + std::to_string(k + 1),
                         lineno);
      const double r = parse_num(cell, lineno, "recurrence");
      if (!(r > prev)) throw ParseError("non-monotone recurrence times", lineno);
      if (r > subj.follow_up) throw ParseError("recurrence time after futime", lineno);
      subj.event_times.push_back(r);
      prev = r;
    }
    cap_events(subj, B, data.dropped_events);
    data.subjects.push_back(std::move(subj));
  }
  if (data.subjects.empty()) throw ParseError("no data rows");
  double max_T = 0.0;
  for (const auto& s : data.subjects) max_T = std::max(max_T, s.follow_up);
  data.tau = max_T;
  data.validate();
  return data;
}

Dataset load_wide_recurrences(const std::string& path, int B) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  return load_wide_recurrences_stream(in, B);
}

void write_long_csv_stream(const Dataset& data, std::ostream& out) {
  out << "id,tstart,tstop,event,terminal";
  for (int j = 0; j < data.p; ++j) out << ",x" << (j + 1);
  out << "\n";
  for (const auto& subj : data.subjects) {
    std::string xs;
    for (int j = 0; j < data.p; ++j) xs += "," + fmt_double(subj.covariates[j]);
    double prev = 0.0;
    const size_t K = subj.event_times.size();
    for (size_t k = 0; k < K; ++k) {
      const double t = subj.event_times[k];
      const bool last = (k + 1 == K) && (t == subj.follow_up);
      out << subj.id << ',' << fmt_double(prev) << ',' << fmt_double(t) << ",1,"
          << (last && subj.terminal ? '1' : '0') << xs << "\n";
      prev = t;
    }
    if (prev < subj.follow_up) {
      out << subj.id << ',' << fmt_double(prev) << ',' << fmt_double(subj.follow_up) << ",0,"
          << (subj.terminal ? '1' : '0') << xs << "\n";
    }
  }
}

void write_long_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  write_long_csv_stream(data, out);
}

}  // namespace esrm
