#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "cull/error.hpp"
#include "cull/pruning/pruning.hpp"
#include "cull/util/text.hpp"

namespace cull {

namespace {

using Json = nlohmann::ordered_json;

Json layer_names(const std::vector<LayerId>& ids) {
  Json j = Json::array();
  for (LayerId id : ids) j.push_back(id.name());
  return j;
}

std::vector<LayerId> parse_layers(const Json& j) {
  std::vector<LayerId> out;
  for (const auto& s : j) out.push_back(LayerId::parse(s.get<std::string>()));
  return out;
}

Json record_json(const ImportanceRecord& r, bool chosen) {
  Json j;
  j["type"] = "candidate";
  j["step"] = r.step;
  j["layer"] = r.candidate.name();
  j["spbleu"] = r.spbleu;
  j["drop"] = r.drop;
  j["weighted_drop"] = r.weighted_drop;
  j["chosen"] = chosen;
  return j;
}

}  // namespace

std::string trace_jsonl(const PruneTrace& t) {
  std::string out;
  Json h;
  h["type"] = "header";
  h["directions"] = t.directions;
  h["weights"] = t.weights;
  h["baseline"] = t.baseline;
  if (std::isfinite(t.threshold)) {
    h["threshold"] = t.threshold;
  } else {
    h["threshold"] = nullptr;
  }
  h["stop_rule"] = to_string(t.stop_rule);
  h["initial_mask"] = layer_names({t.initial_mask.removed.begin(), t.initial_mask.removed.end()});
  h["candidates"] = layer_names(t.candidates);
  out += h.dump() + "\n";
  for (std::size_t s = 0; s < t.scans.size(); ++s) {
    for (const auto& r : t.scans[s]) {
      const bool chosen = s < t.chosen.size() && t.chosen[s] == r;
      out += record_json(r, chosen).dump() + "\n";
    }
  }
  Json f;
  f["type"] = "footer";
  std::vector<LayerId> removed;
  for (const auto& r : t.chosen) removed.push_back(r.candidate);
  f["removed"] = layer_names(removed);
  f["stop_reason"] = to_string(t.stop_reason);
  f["scans"] = t.scans.size();
  out += f.dump() + "\n";
  return out;
}

PruneTrace parse_trace_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  PruneTrace t;
  bool header = false, footer = false;
  std::vector<LayerId> removed;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (footer) throw FormatError("trace: records after footer");
      const Json j = Json::parse(line);
      const std::string type = j.at("type");
      if (type == "header") {
        if (header) throw FormatError("trace: duplicate header");
        header = true;
        t.directions = j.at("directions").get<std::vector<std::string>>();
        t.weights = j.at("weights").get<std::vector<double>>();
        t.baseline = j.at("baseline").get<std::vector<double>>();
        t.threshold = j.at("threshold").is_null() ? std::numeric_limits<double>::infinity() : j.at("threshold").get<double>();
        t.stop_rule = parse_stop_rule(j.at("stop_rule"));
        for (LayerId id : parse_layers(j.at("initial_mask"))) t.initial_mask.removed.insert(id);
        t.candidates = parse_layers(j.at("candidates"));
      } else if (type == "candidate") {
        if (!header) throw FormatError("trace: record before header");
        ImportanceRecord r;
        r.step = j.at("step");
        r.candidate = LayerId::parse(j.at("layer"));
        r.spbleu = j.at("spbleu").get<std::vector<double>>();
        r.drop = j.at("drop").get<std::vector<double>>();
        r.weighted_drop = j.at("weighted_drop");
        if (r.step < 1 || static_cast<std::size_t>(r.step) > t.scans.size() + 1) throw FormatError("trace: step out of order");
        if (static_cast<std::size_t>(r.step) == t.scans.size() + 1) t.scans.emplace_back();
        t.scans.back().push_back(r);
        if (j.at("chosen").get<bool>()) t.chosen.push_back(r);
      } else if (type == "footer") {
        if (!header) throw FormatError("trace: footer before header");
        footer = true;
        removed = parse_layers(j.at("removed"));
        t.stop_reason = parse_stop_reason(j.at("stop_reason"));
        if (j.at("scans").get<std::size_t>() != t.scans.size()) throw FormatError("trace: scan count mismatch");
      } else {
        throw FormatError("trace: unknown record type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("trace: ") + e.what());
  }
  if (!header || !footer) throw FormatError("trace: missing header or footer");
  if (removed.size() != t.chosen.size()) throw FormatError("trace: footer disagrees with chosen records");
  for (std::size_t i = 0; i < removed.size(); ++i) {
    if (removed[i] != t.chosen[i].candidate) throw FormatError("trace: footer disagrees with chosen records");
  }
  return t;
}

void write_trace(const std::filesystem::path& path, const PruneTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << trace_jsonl(trace);
}

PruneTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_trace_jsonl(buf.str());
}

std::string importance_csv(const ImportanceMatrix& mx) {
  std::string out = "scan";
  for (LayerId id : mx.layers) out += "," + id.name();
  out += "\n";
  for (std::size_t s = 0; s < mx.rows(); ++s) {
    out += std::to_string(s + 1);
    for (std::size_t j = 0; j < mx.layers.size(); ++j) {
      out += ",";
      switch (mx.state[s][j]) {
        case ImportanceMatrix::Cell::Value: out += format_double(mx.drop[s][j]); break;
        case ImportanceMatrix::Cell::Removed: out += "removed"; break;
        case ImportanceMatrix::Cell::Empty: break;
      }
    }
    out += "\n";
  }
  return out;
}

ImportanceMatrix parse_importance_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("importance csv: empty");
  auto head = split(line, ',');
  if (head.empty() || head[0] != "scan") throw FormatError("importance csv: bad header");
  ImportanceMatrix mx;
  try {
    for (std::size_t j = 1; j < head.size(); ++j) mx.layers.push_back(LayerId::parse(head[j]));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("importance csv: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != head.size()) throw FormatError("importance csv: ragged row");
    if (cells[0] != std::to_string(mx.rows() + 1)) throw FormatError("importance csv: scan numbers out of order");
    std::vector<ImportanceMatrix::Cell> state;
    std::vector<double> drop;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (cells[j] == "removed") {
        state.push_back(ImportanceMatrix::Cell::Removed);
        drop.push_back(0);
      } else if (cells[j].empty()) {
        state.push_back(ImportanceMatrix::Cell::Empty);
        drop.push_back(0);
      } else {
        state.push_back(ImportanceMatrix::Cell::Value);
        drop.push_back(parse_double(cells[j]));
      }
    }
    mx.state.push_back(std::move(state));
    mx.drop.push_back(std::move(drop));
  }
  return mx;
}

std::string normalized_drops_csv(const NormalizedDrops& nd) {
  std::string out = "layer";
  for (const auto& d : nd.directions) out += "," + d;
  out += "\n";
  for (std::size_t i = 0; i < nd.layers.size(); ++i) {
    out += nd.layers[i].name();
    for (double v : nd.values[i]) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace cull
