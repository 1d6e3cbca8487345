#pragma once

// Aggregation and the results-directory format.
//
// Results directory layout (all plain text, numbers with 17 significant
// digits so files round-trip exactly):
//   config.json                 resolved config snapshot
//   manifest.txt                config hash and file list
//   aggregate.csv               one AggregateRow per cell (kAggregateHeader)
//   series.csv                  plot-ready per-cell mean curves (kSeriesHeader)
//   episodes/<cell>_e<k>.csv    per-episode logs ("# key=value" header lines,
//                               then kEpisodeHeader columns)
// Every file starts with a "# config_hash=<hex>" line.

#include "trifinger/harness/config.hpp"
#include "trifinger/harness/episode.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace trifinger::harness {

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateRow {
  std::string controller;
  std::string grasp;
  double delta_theta_deg = 0.0;
  int trials = 0;
  int dropped = 0;
  double drop_pct = 0.0;
  // Error statistics over non-dropped episodes only (NaN when absent).
  double ori_err_mean_deg = 0.0;
  double ori_err_std_deg = 0.0;
  double pos_err_mean_cm = 0.0;
  double pos_err_std_cm = 0.0;
  // Return statistics over all episodes.
  double return_mean = 0.0;
  double return_std = 0.0;
  bool errors_absent = false;  // every episode dropped
  int error_episodes = 0;      // episodes with controller/world error flags
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) {
    m.mean = m.std = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

/// Aggregates one cell. Error statistics exclude dropped episodes; the drop
/// percentage and return statistics use all episodes. If every episode
/// dropped, the row has errors_absent set (NaN error fields) and, when
/// `strict`, EmptyCell is thrown instead.
inline AggregateRow aggregate(const std::vector<EpisodeLog>& logs, bool strict = false) {
  if (logs.empty()) throw EmptyCell("aggregate: no episodes");
  AggregateRow row;
  row.controller = logs.front().controller;
  row.grasp = logs.front().grasp_kind;
  row.delta_theta_deg = logs.front().delta_theta_deg;
  row.trials = static_cast<int>(logs.size());
  std::vector<double> ori, pos, ret;
  for (const EpisodeLog& l : logs) {
    ret.push_back(l.terminal.episode_return);
    if (!l.errors.empty()) ++row.error_episodes;
    if (l.terminal.dropped) {
      ++row.dropped;
      continue;
    }
    ori.push_back(l.terminal.ori_err_deg);
    pos.push_back(l.terminal.pos_err_cm);
  }
  row.drop_pct = 100.0 * row.dropped / row.trials;
  const MeanStd r = mean_std(ret);
  row.return_mean = r.mean;
  row.return_std = r.std;
  row.errors_absent = ori.empty();
  if (row.errors_absent && strict) {
    throw EmptyCell("aggregate: every episode in " + row.controller + "-" + row.grasp + " dropped");
  }
  const MeanStd o = mean_std(ori);
  const MeanStd p = mean_std(pos);
  row.ori_err_mean_deg = o.mean;
  row.ori_err_std_deg = o.std;
  row.pos_err_mean_cm = p.mean;
  row.pos_err_std_cm = p.std;
  return row;
}

// ---------------------------------------------------------------------------
// Number formatting

inline std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IoError("parse: not a number: '" + s + "'");
  }
  if (used != s.size()) throw IoError("parse: trailing characters in '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) out.push_back(sep);
    out += v[k];
  }
  return out;
}

/// Free text (errors, notes) is stored on a single header line; separators
/// and newlines are replaced.
inline std::string sanitize(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r' || ch == '|') ch = ' ';
  }
  return s;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(line);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregate table

inline const std::vector<std::string>& aggregate_header() {
  static const std::vector<std::string> h = {
      "controller",       "grasp",           "delta_theta_deg", "trials",
      "dropped",          "drop_pct",        "ori_err_mean_deg", "ori_err_std_deg",
      "pos_err_mean_cm",  "pos_err_std_cm",  "return_mean",     "return_std",
      "errors_absent",    "error_episodes"};
  return h;
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& hash) {
  std::ostringstream out;
  out << "# config_hash=" << hash << '\n';
  out << join(aggregate_header(), ',') << '\n';
  for (const AggregateRow& r : rows) {
    out << r.controller << ',' << r.grasp << ',' << fmt(r.delta_theta_deg) << ',' << r.trials << ','
        << r.dropped << ',' << fmt(r.drop_pct) << ',' << fmt(r.ori_err_mean_deg) << ','
        << fmt(r.ori_err_std_deg) << ',' << fmt(r.pos_err_mean_cm) << ',' << fmt(r.pos_err_std_cm)
        << ',' << fmt(r.return_mean) << ',' << fmt(r.return_std) << ',' << (r.errors_absent ? 1 : 0)
        << ',' << r.error_episodes << '\n';
  }
  return out.str();
}

inline std::vector<AggregateRow> parse_aggregate_csv(const std::string& text) {
  const std::vector<std::string> lines = data_lines(text);
  if (lines.empty() || split(lines[0], ',') != aggregate_header()) {
    throw IoError("aggregate csv: header does not match the documented column order");
  }
  std::vector<AggregateRow> rows;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = split(lines[k], ',');
    if (f.size() != aggregate_header().size()) throw IoError("aggregate csv: wrong column count");
    AggregateRow r;
    r.controller = f[0];
    r.grasp = f[1];
    r.delta_theta_deg = parse_number(f[2]);
    r.trials = static_cast<int>(parse_number(f[3]));
    r.dropped = static_cast<int>(parse_number(f[4]));
    r.drop_pct = parse_number(f[5]);
    r.ori_err_mean_deg = parse_number(f[6]);
    r.ori_err_std_deg = parse_number(f[7]);
    r.pos_err_mean_cm = parse_number(f[8]);
    r.pos_err_std_cm = parse_number(f[9]);
    r.return_mean = parse_number(f[10]);
    r.return_std = parse_number(f[11]);
    r.errors_absent = parse_number(f[12]) != 0.0;
    r.error_episodes = static_cast<int>(parse_number(f[13]));
    rows.push_back(r);
  }
  return rows;
}

/// Field-wise equality treating NaN == NaN.
inline bool same_rows(const AggregateRow& a, const AggregateRow& b) {
  auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  return a.controller == b.controller && a.grasp == b.grasp && eq(a.delta_theta_deg, b.delta_theta_deg) &&
         a.trials == b.trials && a.dropped == b.dropped && eq(a.drop_pct, b.drop_pct) &&
         eq(a.ori_err_mean_deg, b.ori_err_mean_deg) && eq(a.ori_err_std_deg, b.ori_err_std_deg) &&
         eq(a.pos_err_mean_cm, b.pos_err_mean_cm) && eq(a.pos_err_std_cm, b.pos_err_std_cm) &&
         eq(a.return_mean, b.return_mean) && eq(a.return_std, b.return_std) &&
         a.errors_absent == b.errors_absent && a.error_episodes == b.error_episodes;
}

// ---------------------------------------------------------------------------
// Episode logs

inline std::vector<std::string> episode_header() {
  std::vector<std::string> h = {"t"};
  for (int k = 0; k < 9; ++k) h.push_back("q" + std::to_string(k));
  for (int k = 0; k < 9; ++k) h.push_back("dq" + std::to_string(k));
  for (int k = 0; k < 9; ++k) h.push_back("tau" + std::to_string(k));
  for (const char* n : {"cube_x", "cube_y", "cube_z", "cube_qw", "cube_qx", "cube_qy", "cube_qz"}) {
    h.push_back(n);
  }
  for (int k = 0; k < 3; ++k) h.push_back("contact" + std::to_string(k));
  for (int k = 0; k < 3; ++k) h.push_back("fn" + std::to_string(k));
  h.push_back("reward");
  return h;
}

inline std::string pose_string(const Pose& p) {
  const Quat& q = p.orientation;
  return join({fmt(p.position.x()), fmt(p.position.y()), fmt(p.position.z()), fmt(q.w()), fmt(q.x()),
               fmt(q.y()), fmt(q.z())},
              ',');
}

inline Pose parse_pose(const std::string& s) {
  const auto f = split(s, ',');
  if (f.size() != 7) throw IoError("episode log: bad pose '" + s + "'");
  Pose p;
  p.position = Vec3(parse_number(f[0]), parse_number(f[1]), parse_number(f[2]));
  p.orientation = Quat(parse_number(f[3]), parse_number(f[4]), parse_number(f[5]), parse_number(f[6]));
  return p;
}

inline Face parse_face(const std::string& s) {
  for (Face f : {Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ}) {
    if (s == face_name(f)) return f;
  }
  throw IoError("episode log: unknown face '" + s + "'");
}

inline std::string grasp_string(const Grasp& g) {
  std::vector<std::string> parts;
  for (int i = 0; i < kNumFingers; ++i) {
    const GraspContact& c = g.for_finger(i);
    parts.push_back(std::string(face_name(c.face)) + ":" + fmt(c.point.x()) + ":" + fmt(c.point.y()) +
                    ":" + fmt(c.point.z()));
  }
  return join(parts, ';');
}

inline std::string episode_csv(const EpisodeLog& l) {
  std::ostringstream out;
  out << "# config_hash=" << l.config_hash << '\n';
  out << "# seed=" << l.seed << '\n';
  out << "# controller=" << l.controller << '\n';
  out << "# grasp=" << l.grasp_kind << '\n';
  out << "# grasp_label=" << sanitize(l.grasp.label) << '\n';
  out << "# grasp_contacts=" << grasp_string(l.grasp) << '\n';
  out << "# delta_theta_deg=" << fmt(l.delta_theta_deg) << '\n';
  out << "# level=" << l.level << '\n';
  out << "# reward_rate_hz=" << fmt(l.reward_rate_hz) << '\n';
  out << "# d_xy=" << fmt(l.d_xy) << '\n';
  out << "# d_z=" << fmt(l.d_z) << '\n';
  out << "# start=" << pose_string(l.start) << '\n';
  out << "# goal=" << pose_string(l.goal) << '\n';
  out << "# singular=" << (l.singular ? 1 : 0) << '\n';
  out << "# max_abs_residual=" << fmt(l.max_abs_residual) << '\n';
  std::vector<std::string> errs, notes;
  for (const auto& e : l.errors) errs.push_back(sanitize(e));
  for (const auto& n : l.notes) notes.push_back(sanitize(n));
  out << "# errors=" << join(errs, '|') << '\n';
  out << "# notes=" << join(notes, '|') << '\n';
  out << "# terminal_pos_err_cm=" << fmt(l.terminal.pos_err_cm) << '\n';
  out << "# terminal_ori_err_deg=" << fmt(l.terminal.ori_err_deg) << '\n';
  out << "# terminal_dropped=" << (l.terminal.dropped ? 1 : 0) << '\n';
  out << "# terminal_return=" << fmt(l.terminal.episode_return) << '\n';
  out << join(episode_header(), ',') << '\n';
  for (const EpisodeSample& s : l.samples) {
    out << fmt(s.t);
    for (int k = 0; k < 9; ++k) out << ',' << fmt(s.q[k]);
    for (int k = 0; k < 9; ++k) out << ',' << fmt(s.dq[k]);
    for (int k = 0; k < 9; ++k) out << ',' << fmt(s.tau[k]);
    out << ',' << pose_string(s.cube);
    for (int k = 0; k < 3; ++k) out << ',' << (s.in_contact[k] ? 1 : 0);
    for (int k = 0; k < 3; ++k) out << ',' << fmt(s.normal_force[k]);
    out << ',' << fmt(s.reward) << '\n';
  }
  return out.str();
}

inline EpisodeLog parse_episode_csv(const std::string& text) {
  EpisodeLog l;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  const std::vector<std::string> header = episode_header();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "config_hash") l.config_hash = val;
      else if (key == "seed") l.seed = std::stoull(val);
      else if (key == "controller") l.controller = val;
      else if (key == "grasp") l.grasp_kind = val;
      else if (key == "grasp_label") l.grasp.label = val;
      else if (key == "grasp_contacts") {
        const auto parts = split(val, ';');
        if (parts.size() == 3) {
          for (int i = 0; i < 3; ++i) {
            const auto f = split(parts[i], ':');
            if (f.size() != 4) throw IoError("episode log: bad grasp contact");
            l.grasp.contacts[i].face = parse_face(f[0]);
            l.grasp.contacts[i].point = Vec3(parse_number(f[1]), parse_number(f[2]), parse_number(f[3]));
            l.grasp.contacts[i].normal = -face_outward_normal(l.grasp.contacts[i].face);
            l.grasp.finger_assignment[i] = i;
          }
        }
      } else if (key == "delta_theta_deg") l.delta_theta_deg = parse_number(val);
      else if (key == "level") l.level = std::stoi(val);
      else if (key == "reward_rate_hz") l.reward_rate_hz = parse_number(val);
      else if (key == "d_xy") l.d_xy = parse_number(val);
      else if (key == "d_z") l.d_z = parse_number(val);
      else if (key == "start") l.start = parse_pose(val);
      else if (key == "goal") l.goal = parse_pose(val);
      else if (key == "singular") l.singular = val == "1";
      else if (key == "max_abs_residual") l.max_abs_residual = parse_number(val);
      else if (key == "errors") { if (!val.empty()) l.errors = split(val, '|'); }
      else if (key == "notes") { if (!val.empty()) l.notes = split(val, '|'); }
      else if (key == "terminal_pos_err_cm") l.terminal.pos_err_cm = parse_number(val);
      else if (key == "terminal_ori_err_deg") l.terminal.ori_err_deg = parse_number(val);
      else if (key == "terminal_dropped") l.terminal.dropped = val == "1";
      else if (key == "terminal_return") l.terminal.episode_return = parse_number(val);
      continue;
    }
    if (!header_seen) {
      if (split(line, ',') != header) throw IoError("episode log: unexpected column header");
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw IoError("episode log: wrong column count");
    EpisodeSample s;
    std::size_t n = 0;
    s.t = parse_number(f[n++]);
    for (int k = 0; k < 9; ++k) s.q[k] = parse_number(f[n++]);
    for (int k = 0; k < 9; ++k) s.dq[k] = parse_number(f[n++]);
    for (int k = 0; k < 9; ++k) s.tau[k] = parse_number(f[n++]);
    s.cube.position = Vec3(parse_number(f[n]), parse_number(f[n + 1]), parse_number(f[n + 2]));
    s.cube.orientation = Quat(parse_number(f[n + 3]), parse_number(f[n + 4]), parse_number(f[n + 5]),
                              parse_number(f[n + 6]));
    n += 7;
    for (int k = 0; k < 3; ++k) s.in_contact[k] = f[n++] == "1";
    for (int k = 0; k < 3; ++k) s.normal_force[k] = parse_number(f[n++]);
    s.reward = parse_number(f[n++]);
    l.samples.push_back(s);
  }
  if (!header_seen) throw IoError("episode log: missing column header");
  return l;
}

// ---------------------------------------------------------------------------
// Plot-ready series: per cell, the mean over episodes of reward, position
// error and orientation error at every sample time.

inline const std::vector<std::string>& series_header() {
  static const std::vector<std::string> h = {"controller", "grasp",          "delta_theta_deg", "t",
                                             "mean_reward", "mean_pos_err_cm", "mean_ori_err_deg"};
  return h;
}

inline std::string series_csv(const std::vector<std::vector<EpisodeLog>>& cells, const std::string& hash) {
  std::ostringstream out;
  out << "# config_hash=" << hash << '\n';
  out << join(series_header(), ',') << '\n';
  for (const auto& logs : cells) {
    if (logs.empty()) continue;
    std::size_t n = logs.front().samples.size();
    for (const auto& l : logs) n = std::min(n, l.samples.size());
    for (std::size_t k = 0; k < n; ++k) {
      double r = 0.0, pe = 0.0, oe = 0.0;
      for (const auto& l : logs) {
        const EpisodeSample& s = l.samples[k];
        r += s.reward;
        pe += 100.0 * (s.cube.position - l.goal.position).norm();
        oe += rotation_angle_between(s.cube.orientation, l.goal.orientation) * 180.0 / kPi;
      }
      const double m = static_cast<double>(logs.size());
      out << logs.front().controller << ',' << logs.front().grasp_kind << ','
          << fmt(logs.front().delta_theta_deg) << ',' << fmt(logs.front().samples[k].t) << ','
          << fmt(r / m) << ',' << fmt(pe / m) << ',' << fmt(oe / m) << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Results directory

inline std::string cell_name(const std::string& controller, const std::string& grasp, double dtheta) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%s_d%g", controller.c_str(), grasp.c_str(), dtheta);
  return buf;
}

inline std::string episode_file_name(const EpisodeLog& l, int index) {
  return cell_name(l.controller, l.grasp_kind, l.delta_theta_deg) + "_e" + std::to_string(index) + ".csv";
}

/// Writes the full results directory for a set of cells (each a vector of
/// episode logs in episode-index order) and their aggregate rows.
inline void emit_results(const std::filesystem::path& dir, const ExperimentConfig& config,
                         const std::vector<std::vector<EpisodeLog>>& cells,
                         const std::vector<AggregateRow>& rows) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "episodes", ec);
  if (ec) throw IoError("emit_results: cannot create " + (dir / "episodes").string() + ": " + ec.message());
  const std::string hash = config_hash(config);
  std::vector<std::string> files;
  write_file(dir / "config.json", to_json(config).dump(2) + "\n");
  files.push_back("config.json");
  write_file(dir / "aggregate.csv", aggregate_csv(rows, hash));
  files.push_back("aggregate.csv");
  write_file(dir / "series.csv", series_csv(cells, hash));
  files.push_back("series.csv");
  for (const auto& logs : cells) {
    for (std::size_t k = 0; k < logs.size(); ++k) {
      const std::string name = episode_file_name(logs[k], static_cast<int>(k));
      write_file(dir / "episodes" / name, episode_csv(logs[k]));
      files.push_back("episodes/" + name);
    }
  }
  std::ostringstream m;
  m << "# config_hash=" << hash << '\n';
  for (const auto& f : files) m << f << '\n';
  write_file(dir / "manifest.txt", m.str());
}

/// Re-reads every episode log of a results directory, grouped by cell in
/// manifest order.
inline std::vector<std::vector<EpisodeLog>> load_episode_logs(const std::filesystem::path& dir) {
  const std::vector<std::string> entries = data_lines(read_file(dir / "manifest.txt"));
  std::vector<std::vector<EpisodeLog>> cells;
  std::string current;
  for (const std::string& f : entries) {
    if (f.rfind("episodes/", 0) != 0) continue;
    EpisodeLog l = parse_episode_csv(read_file(dir / f));
    const std::string cell = cell_name(l.controller, l.grasp_kind, l.delta_theta_deg);
    if (cells.empty() || cell != current) {
      cells.emplace_back();
      current = cell;
    }
    cells.back().push_back(std::move(l));
  }
  return cells;
}

}  // namespace trifinger::harness
