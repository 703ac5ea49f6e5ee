#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "markov_mimic/certify.hpp"
#include "markov_mimic/construct.hpp"
#include "markov_mimic/error.hpp"
#include "markov_mimic/markov.hpp"
#include "markov_mimic/pipeline.hpp"
#include "markov_mimic/rational.hpp"

namespace markov_mimic::io {

using json = nlohmann::ordered_json;

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error(where + ": malformed number '" + s + "'");
  return v;
}

inline json to_json(const ExclusionCounts& e) { return json{{"m", e.m}, {"z", e.z}}; }

inline json family_to_json(const EigenvalueFamily& fam) {
  const FamilyMeta& m = fam.meta;
  json j;
  j["grid"] = fam.grid().M();
  j["mode"] = to_string(m.mode);
  j["case"] = to_string(m.cross_case);
  j["N"] = fam.N();
  j["N1"] = m.N1;
  j["delta"] = m.delta.str();
  j["delta0"] = m.delta0.str();
  j["alpha"] = m.alpha.str();
  j["beta"] = m.beta.str();
  j["a"] = m.a;
  j["k"] = m.k;
  j["b"] = m.b;
  j["tau"] = m.tau;
  j["representatives"] = m.representatives;
  json ranges = json::array();
  for (auto [lo, hi] : fam.indices().ranges) ranges.push_back(json::array({lo, hi}));
  j["indices"] = ranges;
  j["exclusions"] = to_json(m.exclusions);
  json ends;
  for (int end = 0; end < 2; ++end) {
    json col = json::array();
    for (const auto& s : fam.exact_column(end)) col.push_back(json::array({s.pos, s.value.str()}));
    ends[end == 0 ? "y0" : "y1"] = col;
  }
  j["endpoints"] = ends;
  return j;
}

/// Rows "y,pos_begin,pos_end,value": maps at positions pos_begin..pos_end take value at grid point y.
inline void write_family_csv(std::ostream& os, const EigenvalueFamily& fam) {
  os << "y,pos_begin,pos_end,value\n";
  std::string line;
  for (int y = 0; y <= fam.grid().M(); ++y) {
    auto col = fam.column(y);
    for (std::size_t i = 0; i < col.size(); ++i) {
      line = std::to_string(y);
      line += ',';
      line += std::to_string(col[i].pos);
      line += ',';
      line += std::to_string(col[i].pos + fam.segment_length(col, i) - 1);
      line += ',';
      line += format_double(col[i].value);
      line += '\n';
      os << line;
    }
  }
}

inline EigenvalueFamily read_family(const json& j, std::istream& csv) {
  try {
    const Grid grid(j.at("grid").get<int>());
    IndexSet D;
    for (const auto& r : j.at("indices")) D.add(r.at(0).get<std::int64_t>(), r.at(1).get<std::int64_t>());
    std::vector<ExactSegment> ends[2];
    for (int end = 0; end < 2; ++end)
      for (const auto& s : j.at("endpoints").at(end == 0 ? "y0" : "y1"))
        ends[end].push_back(ExactSegment{s.at(0).get<std::int64_t>(), Rational::parse(s.at(1).get<std::string>())});
    std::vector<std::vector<Segment>> cols(grid.size());
    std::string line;
    int lineno = 0;
    while (std::getline(csv, line)) {
      ++lineno;
      if (lineno == 1 || line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      const std::string where = "family csv line " + std::to_string(lineno);
      if (f.size() != 4) throw Error(where + ": expected 4 fields");
      const auto y = static_cast<int>(parse_double(f[0], where));
      if (y < 0 || y > grid.M()) throw Error(where + ": y out of range");
      cols[static_cast<std::size_t>(y)].push_back(
          Segment{static_cast<std::int64_t>(parse_double(f[1], where)), parse_double(f[3], where)});
    }
    EigenvalueFamily fam(grid, std::move(D), std::move(cols), std::move(ends[0]), std::move(ends[1]));
    FamilyMeta& m = fam.meta;
    m.mode = j.at("mode").get<std::string>() == "same" ? Mode::same : Mode::cross;
    const std::string cc = j.at("case").get<std::string>();
    m.cross_case = cc == "I" ? CrossCase::I : cc == "II" ? CrossCase::II : CrossCase::none;
    m.N1 = j.at("N1").get<std::int64_t>();
    m.delta = Rational::parse(j.at("delta").get<std::string>());
    m.delta0 = Rational::parse(j.at("delta0").get<std::string>());
    m.alpha = Rational::parse(j.at("alpha").get<std::string>());
    m.beta = Rational::parse(j.at("beta").get<std::string>());
    m.a = j.at("a").get<std::int64_t>();
    m.k = j.at("k").get<std::int64_t>();
    m.b = j.at("b").get<std::int64_t>();
    m.tau = j.at("tau").get<int>();
    m.representatives = j.at("representatives").get<std::vector<int>>();
    m.exclusions.m = j.at("exclusions").at("m").get<std::vector<std::int64_t>>();
    m.exclusions.z = j.at("exclusions").at("z").get<std::vector<std::int64_t>>();
    return fam;
  } catch (const json::exception& e) {
    throw Error(std::string("family json: ") + e.what());
  }
}

inline json certificate_to_json(const Certificate& c, const StepBudgets* budgets = nullptr) {
  json j;
  j["sup_error"] = c.sup_error;
  j["eps"] = c.eps;
  j["per_function"] = c.per_function;
  j["budgets"] = budgets ? json(budgets->values()) : json::array();
  j["boundary_ok"] = c.boundary.holds;
  j["boundary_detail"] = c.boundary.detail;
  json tally = json::array();
  for (std::size_t i = 0; i < c.tally.representatives.size(); ++i) {
    if (c.tally.c0[i] == 0 && c.tally.c1[i] == 0) continue;
    tally.push_back(json{{"point", c.tally.representatives[i]}, {"c0", c.tally.c0[i]}, {"c1", c.tally.c1[i]}});
  }
  j["tally"] = tally;
  j["N"] = c.N;
  j["N1"] = c.N1;
  j["passed"] = c.passed();
  return j;
}

inline json diagnostics_to_json(const PipelineDiagnostics& d) {
  json j;
  j["mode"] = to_string(d.mode);
  j["case"] = to_string(d.cross_case);
  j["delta0"] = d.delta0.str();
  j["n"] = d.n;
  j["delta"] = d.delta.str();
  j["N1"] = d.N1;
  j["N"] = d.N;
  j["tau"] = d.tau;
  j["a"] = d.a;
  j["k"] = d.k;
  j["b"] = d.b;
  j["lattice"] = d.lattice;
  j["step_one_raw"] = d.step_one_raw;
  j["measured_ratio"] = d.measured_ratio;
  return j;
}

inline json residuals_to_json(const RelationResiduals& r) {
  return json{{"interior", r.interior},
              {"boundary_pair", r.boundary_pair},
              {"first_cell", r.first_cell},
              {"last_cell", r.last_cell},
              {"max", r.max()}};
}

/// Rows "y,phi,avg": phi(f)(y) against the family average of f o h_d at y.
inline void write_plot_csv(std::ostream& os, const MarkovKernel& kernel, const EigenvalueFamily& fam,
                           const SampledFunction& f) {
  const SampledFunction pf = apply(kernel, f);
  const double N = static_cast<double>(fam.N());
  os << "y,phi,avg\n";
  for (int y = 0; y <= fam.grid().M(); ++y) {
    auto col = fam.column(y);
    double s = 0;
    for (std::size_t i = 0; i < col.size(); ++i) s += static_cast<double>(fam.segment_length(col, i)) * f(col[i].value);
    os << format_double(fam.grid().point(y)) << ',' << format_double(pf[y]) << ',' << format_double(s / N) << '\n';
  }
}

}  // namespace markov_mimic::io
