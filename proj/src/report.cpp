#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "metacount/eval.hpp"

namespace metacount::eval {

namespace {

using nlohmann::ordered_json;

ordered_json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

ordered_json protocol_json(const ProtocolConfig& p) {
  return {{"k", p.k},         {"steps", p.steps}, {"trials", p.trials},
          {"alpha", p.alpha}, {"roi", p.use_roi}, {"seed", p.seed}};
}

ordered_json triple_json(const MetricTriple& m) {
  return {{"mae", m.mae},
          {"rmse", m.rmse},
          {"mde", m.mde},
          {"n_images", m.n_images},
          {"n_skipped_mde", m.n_skipped_mde}};
}

std::string cell(const Summary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f +- %.3f", s.mean, s.std);
  return buf;
}

}  // namespace

std::string render_json(const AdaptationReport& report) {
  ordered_json j;
  j["scene_id"] = report.scene_id;
  j["protocol"] = protocol_json(report.protocol);
  j["std_form"] = "population";
  j["mae"] = summary_json(report.mae);
  j["rmse"] = summary_json(report.rmse);
  j["mde"] = summary_json(report.mde);
  ordered_json trials = ordered_json::array();
  for (const auto& t : report.trials) {
    trials.push_back({{"seed", t.seed},
                      {"shots", t.shots},
                      {"final", triple_json(t.final)},
                      {"curve", t.curve}});
  }
  j["trials"] = std::move(trials);
  return j.dump(2) + "\n";
}

std::string render_json(const ComparisonTable& table) {
  ordered_json j;
  j["protocol"] = protocol_json(table.protocol);
  j["std_form"] = "population";
  ordered_json methods = ordered_json::array();
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : table.rows[m]) {
      rows.push_back({{"label", r.label},
                      {"mae", summary_json(r.mae)},
                      {"rmse", summary_json(r.rmse)},
                      {"mde", summary_json(r.mde)}});
    }
    methods.push_back({{"method", table.methods[m]}, {"rows", std::move(rows)}});
  }
  j["methods"] = std::move(methods);
  return j.dump(2) + "\n";
}

std::string render_text(const ComparisonTable& table) {
  std::ostringstream os;
  os << "K=" << table.protocol.k << " trials=" << table.protocol.trials
     << " roi=" << (table.protocol.use_roi ? "on" : "off") << " (mean +- population std)\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-10s %-18s %-18s %-18s\n", "method", "row", "MAE",
                "RMSE", "MDE");
  os << line;
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    for (const auto& r : table.rows[m]) {
      std::snprintf(line, sizeof line, "%-16s %-10s %-18s %-18s %-18s\n",
                    table.methods[m].c_str(), r.label.c_str(), cell(r.mae).c_str(),
                    cell(r.rmse).c_str(), cell(r.mde).c_str());
      os << line;
    }
  }
  return os.str();
}

std::string render_curves_csv(const AdaptationReport& report) {
  std::ostringstream os;
  os << "trial,step,mae\n";
  char buf[64];
  for (std::size_t t = 0; t < report.trials.size(); ++t) {
    const auto& c = report.trials[t].curve;
    for (std::size_t s = 0; s < c.size(); ++s) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", t, s, c[s]);
      os << buf;
    }
  }
  return os.str();
}

}  // namespace metacount::eval
