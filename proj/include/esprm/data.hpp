#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "esprm/common.hpp"
#include "esprm/rng.hpp"

namespace esprm {

/// Observational sample: contexts X (n x d), treatments T in {-1,+1}, and
/// outcomes Y.
struct Dataset {
  Matrix X;
  Vector T;
  Vector Y;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  void validate() const {
    require(T.size() == n() && Y.size() == n(),
            "dataset: X/T/Y row counts disagree");
    require(all_finite(X) && all_finite(Y), "dataset: non-finite values");
    for (Eigen::Index i = 0; i < T.size(); ++i) {
      require(T(i) == 1.0 || T(i) == -1.0,
              "dataset: t must be -1 or +1 at row " + std::to_string(i + 1));
    }
  }
};

enum class ScoreKind { IPS, DM, DR, GIVEN };

inline std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::IPS: return "IPS";
    case ScoreKind::DM: return "DM";
    case ScoreKind::DR: return "DR";
    case ScoreKind::GIVEN: return "GIVEN";
  }
  return "?";
}

inline ScoreKind score_kind_from_string(std::string_view s) {
  if (s == "IPS") return ScoreKind::IPS;
  if (s == "DM") return ScoreKind::DM;
  if (s == "DR") return ScoreKind::DR;
  if (s == "GIVEN") return ScoreKind::GIVEN;
  throw Error("unknown score kind '" + std::string(s) + "'");
}

/// Contexts plus per-row scores psi. T and Y are kept when the scores were
/// computed from an observational sample and absent for GIVEN scores
/// (the well-specified fixture supplies psi directly).
struct ScoredDataset {
  Matrix X;
  std::optional<Vector> T;
  std::optional<Vector> Y;
  Vector psi;
  ScoreKind kind = ScoreKind::GIVEN;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  void validate() const {
    require(psi.size() == n(), "scored dataset: psi length mismatch");
    require(all_finite(X) && all_finite(psi),
            "scored dataset: non-finite values");
  }
};

/// Disjoint index sets over one dataset.
struct SplitPlan {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> tuning;
  std::vector<Eigen::Index> validation;
  std::uint64_t seed = 0;
};

/// Shuffles 0..n-1 with the seed and deals consecutive blocks sized by the
/// fractions: train, then tuning, then validation. Fractions must each lie
/// in [0,1] and sum to at most 1.
inline SplitPlan split(Eigen::Index n, const std::vector<double>& fractions,
                       std::uint64_t seed) {
  require(!fractions.empty() && fractions.size() <= 3,
          "split: between 1 and 3 fractions expected");
  double total = 0.0;
  for (double f : fractions) {
    require(f >= 0.0 && f <= 1.0,
            "split: fraction " + std::to_string(f) + " out of [0,1]");
    total += f;
  }
  require(total <= 1.0 + 1e-12, "split: fractions sum to " +
                                    std::to_string(total) + ", must be <= 1");

  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  RngStream rng(seed, "split");
  rng.shuffle(order);

  SplitPlan plan;
  plan.seed = seed;
  std::size_t pos = 0;
  auto take = [&](double f) {
    const auto count = static_cast<std::size_t>(f * double(n));
    std::vector<Eigen::Index> idx(order.begin() + pos,
                                  order.begin() + pos + count);
    pos += count;
    return idx;
  };
  plan.train = take(fractions[0]);
  if (fractions.size() > 1) plan.tuning = take(fractions[1]);
  if (fractions.size() > 2) plan.validation = take(fractions[2]);
  return plan;
}

inline Dataset subset(const Dataset& d, const std::vector<Eigen::Index>& idx) {
  Dataset out;
  out.X.resize(Eigen::Index(idx.size()), d.dim());
  out.T.resize(Eigen::Index(idx.size()));
  out.Y.resize(Eigen::Index(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.X.row(Eigen::Index(i)) = d.X.row(idx[i]);
    out.T(Eigen::Index(i)) = d.T(idx[i]);
    out.Y(Eigen::Index(i)) = d.Y(idx[i]);
  }
  return out;
}

inline ScoredDataset subset(const ScoredDataset& d,
                            const std::vector<Eigen::Index>& idx) {
  ScoredDataset out;
  out.kind = d.kind;
  out.X.resize(Eigen::Index(idx.size()), d.dim());
  out.psi.resize(Eigen::Index(idx.size()));
  if (d.T) out.T = Vector(Eigen::Index(idx.size()));
  if (d.Y) out.Y = Vector(Eigen::Index(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.X.row(Eigen::Index(i)) = d.X.row(idx[i]);
    out.psi(Eigen::Index(i)) = d.psi(idx[i]);
    if (d.T) (*out.T)(Eigen::Index(i)) = (*d.T)(idx[i]);
    if (d.Y) (*out.Y)(Eigen::Index(i)) = (*d.Y)(idx[i]);
  }
  return out;
}

namespace detail {

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view cell, Eigen::Index row,
                           std::string_view column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw Error("row " + std::to_string(row) + ": non-numeric value '" +
                std::string(cell) + "' in column " + std::string(column));
  }
  if (!std::isfinite(v)) {
    throw Error("row " + std::to_string(row) + ": non-finite value in column " +
                std::string(column));
  }
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline std::string dataset_header(Eigen::Index d) {
  std::string h;
  for (Eigen::Index j = 0; j < d; ++j) h += "x" + std::to_string(j) + ",";
  return h + "t,y";
}

}  // namespace detail

/// CSV with header x0,...,x{d-1},t,y. Row order preserved; data rows are
/// numbered from 1 in error messages. `expected_dim` < 0 infers d from the
/// header.
inline Dataset load_dataset(const std::string& path, int expected_dim = -1) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw Error("'" + path + "': no rows");

  const auto header = detail::split_csv_line(lines[0]);
  if (header.size() < 3 || header[header.size() - 2] != "t" ||
      header.back() != "y") {
    throw Error("'" + path + "': header must be x0,...,x{d-1},t,y, got '" +
                lines[0] + "'");
  }
  const auto d = Eigen::Index(header.size()) - 2;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (header[j] != "x" + std::to_string(j)) {
      throw Error("'" + path + "': missing column x" + std::to_string(j));
    }
  }
  if (expected_dim >= 0 && d != expected_dim) {
    throw Error("'" + path + "': has " + std::to_string(d) +
                " context columns, expected " + std::to_string(expected_dim));
  }
  if (lines.size() == 1) throw Error("'" + path + "': no rows");

  const auto n = Eigen::Index(lines.size()) - 1;
  Dataset out;
  out.X.resize(n, d);
  out.T.resize(n);
  out.Y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cells = detail::split_csv_line(lines[i + 1]);
    if (Eigen::Index(cells.size()) != d + 2) {
      throw Error("row " + std::to_string(i + 1) + ": expected " +
                  std::to_string(d + 2) + " columns, found " +
                  std::to_string(cells.size()));
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      out.X(i, j) =
          detail::parse_double(cells[j], i + 1, "x" + std::to_string(j));
    }
    const double t = detail::parse_double(cells[d], i + 1, "t");
    if (t != 1.0 && t != -1.0) {
      throw Error("row " + std::to_string(i + 1) + ": t must be -1 or +1, got " +
                  std::string(cells[d]));
    }
    out.T(i) = t;
    out.Y(i) = detail::parse_double(cells[d + 1], i + 1, "y");
  }
  return out;
}

inline void write_dataset(const std::string& path, const Dataset& d) {
  d.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << detail::dataset_header(d.dim()) << "\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.dim(); ++j) {
      out << detail::format_double(d.X(i, j)) << ",";
    }
    out << detail::format_double(d.T(i)) << ","
        << detail::format_double(d.Y(i)) << "\n";
  }
}

/// Scored CSV: x0,...,x{d-1}[,t][,y],psi. The t and y columns appear only
/// when present in memory.
inline void write_scored(const std::string& path, const ScoredDataset& d) {
  d.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  for (Eigen::Index j = 0; j < d.dim(); ++j) {
    out << "x" << j << ",";
  }
  if (d.T) out << "t,";
  if (d.Y) out << "y,";
  out << "psi\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.dim(); ++j) {
      out << detail::format_double(d.X(i, j)) << ",";
    }
    if (d.T) out << detail::format_double((*d.T)(i)) << ",";
    if (d.Y) out << detail::format_double((*d.Y)(i)) << ",";
    out << detail::format_double(d.psi(i)) << "\n";
  }
}

inline ScoredDataset load_scored(const std::string& path,
                                 ScoreKind kind = ScoreKind::GIVEN) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw Error("'" + path + "': no rows");
  const auto header = detail::split_csv_line(lines[0]);
  if (header.empty() || header.back() != "psi") {
    throw Error("'" + path + "': last column must be psi");
  }
  Eigen::Index d = 0;
  bool has_t = false;
  bool has_y = false;
  for (std::size_t j = 0; j + 1 < header.size(); ++j) {
    if (header[j] == "t") {
      has_t = true;
    } else if (header[j] == "y") {
      has_y = true;
    } else if (header[j] == "x" + std::to_string(d)) {
      ++d;
    } else {
      throw Error("'" + path + "': unexpected column '" +
                  std::string(header[j]) + "'");
    }
  }
  if (lines.size() == 1) throw Error("'" + path + "': no rows");

  const auto n = Eigen::Index(lines.size()) - 1;
  ScoredDataset out;
  out.kind = kind;
  out.X.resize(n, d);
  out.psi.resize(n);
  if (has_t) out.T = Vector(n);
  if (has_y) out.Y = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cells = detail::split_csv_line(lines[i + 1]);
    if (cells.size() != header.size()) {
      throw Error("row " + std::to_string(i + 1) + ": expected " +
                  std::to_string(header.size()) + " columns, found " +
                  std::to_string(cells.size()));
    }
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < d; ++j, ++c) {
      out.X(i, j) =
          detail::parse_double(cells[c], i + 1, "x" + std::to_string(j));
    }
    if (has_t) {
      const double t = detail::parse_double(cells[c], i + 1, "t");
      if (t != 1.0 && t != -1.0) {
        throw Error("row " + std::to_string(i + 1) +
                    ": t must be -1 or +1, got " + std::string(cells[c]));
      }
      (*out.T)(i) = t;
      ++c;
    }
    if (has_y) {
      (*out.Y)(i) = detail::parse_double(cells[c], i + 1, "y");
      ++c;
    }
    out.psi(i) = detail::parse_double(cells[c], i + 1, "psi");
  }
  return out;
}

}  // namespace esprm
