#include "rcm/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "rcm/errors.hpp"

namespace rcm::io {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

// A log-potential: a number, or the string "-inf".
double log_value(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string() && v.get<std::string>() == "-inf") return kNegInf;
  throw ParseError(where + ": expected a number or \"-inf\"");
}

json log_json(double v) {
  if (v == kNegInf) return "-inf";
  return v;
}

std::vector<double> log_vector(const json& v, const std::string& where) {
  if (!v.is_array()) throw ParseError(where + ": expected an array");
  std::vector<double> out;
  for (const json& x : v) out.push_back(log_value(x, where));
  return out;
}

std::string node_name(std::size_t id) { return "tree node " + std::to_string(id); }

std::string vars_text(const std::vector<std::size_t>& vars) {
  std::string s = "{";
  for (std::size_t i = 0; i < vars.size(); ++i) s += (i ? "," : "") + std::to_string(vars[i]);
  return s + "}";
}

}  // namespace

RCModel parse_model(const std::string& text) {
  const json doc = parse_json(text, "model");
  if (!doc.is_object()) throw ParseError("model: top level must be an object");
  if (!doc.contains("num_vars") || !doc["num_vars"].is_number_unsigned())
    throw ParseError("model: \"num_vars\" must be a non-negative integer");
  const std::size_t D = doc["num_vars"].get<std::size_t>();
  if (D == 0) throw ParseError("model: \"num_vars\" must be at least 1");

  std::vector<Unary> unary(D);
  if (doc.contains("unaries")) {
    const json& u = doc["unaries"];
    if (!u.is_array() || u.size() != D)
      throw ParseError("model: \"unaries\" must hold " + std::to_string(D) + " pairs");
    for (std::size_t d = 0; d < D; ++d) {
      const std::string where = "unary " + std::to_string(d);
      if (!u[d].is_array() || u[d].size() != 2) throw ParseError(where + ": expected [l0, l1]");
      unary[d] = Unary{log_value(u[d][0], where), log_value(u[d][1], where)};
      if (std::isnan(unary[d].off) || std::isnan(unary[d].on) || unary[d].off == INFINITY ||
          unary[d].on == INFINITY || (unary[d].off == kNegInf && unary[d].on == kNegInf))
        throw ParseError(where + ": needs a finite entry and no NaN or +inf");
    }
  }
  if (!doc.contains("tree")) throw ParseError("model: missing \"tree\"");

  std::vector<TreeNode> nodes;
  std::vector<std::vector<std::size_t>> vars;
  std::vector<std::optional<CardinalityTable>> tables;
  // Preorder: pop a node, number it, push right child below left.
  struct Pending {
    const json* obj;
    int parent;
    bool left;
  };
  std::vector<Pending> stack{{&doc["tree"], -1, true}};
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    const std::size_t id = nodes.size();
    const std::string name = node_name(id);
    nodes.emplace_back();
    tables.emplace_back();
    if (p.parent >= 0) {
      auto& parent = nodes[static_cast<std::size_t>(p.parent)];
      (p.left ? parent.left : parent.right) = static_cast<int>(id);
    }
    const json& o = *p.obj;
    if (!o.is_object()) throw ParseError(name + ": expected an object");
    if (!o.contains("vars") || !o["vars"].is_array() || o["vars"].empty())
      throw StructureError(name + ": \"vars\" must be a non-empty array");
    std::vector<std::size_t> vs;
    for (const json& v : o["vars"]) {
      if (!v.is_number_unsigned()) throw StructureError(name + ": variable indices must be non-negative integers");
      const auto x = v.get<std::size_t>();
      if (x >= D) throw StructureError(name + ": variable " + std::to_string(x) + " is out of range");
      if (!vs.empty() && x <= vs.back()) throw StructureError(name + ": \"vars\" must be strictly increasing");
      vs.push_back(x);
    }
    vars.push_back(vs);

    const bool has_children = o.contains("children") && !o["children"].is_null();
    if (has_children) {
      const json& ch = o["children"];
      if (!ch.is_array() || ch.size() != 2)
        throw StructureError(name + ": \"children\" must hold exactly two nodes");
      stack.push_back({&ch[1], static_cast<int>(id), false});
      stack.push_back({&ch[0], static_cast<int>(id), true});
    } else {
      if (vs.size() != 1)
        throw StructureError(name + ": leaf must cover exactly one variable, has " + vars_text(vs));
      nodes[id].var = static_cast<int>(vs[0]);
    }

    if (o.contains("log_f") && !o["log_f"].is_null()) {
      std::vector<double> f = log_vector(o["log_f"], name + " log_f");
      if (f.size() != vs.size() + 1)
        throw StructureError(name + ": log_f has " + std::to_string(f.size()) + " entries, expected " +
                             std::to_string(vs.size() + 1));
      try {
        tables[id].emplace(std::move(f));
      } catch (const ArgumentError& e) {
        throw StructureError(name + ": " + e.what());
      }
    }
  }

  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (nodes[id].is_leaf()) continue;
    const auto& l = vars[static_cast<std::size_t>(nodes[id].left)];
    const auto& r = vars[static_cast<std::size_t>(nodes[id].right)];
    std::vector<std::size_t> merged;
    std::merge(l.begin(), l.end(), r.begin(), r.end(), std::back_inserter(merged));
    if (merged != vars[id])
      throw StructureError(node_name(id) + ": vars " + vars_text(vars[id]) +
                           " are not the disjoint union of its children's " + vars_text(l) + " and " +
                           vars_text(r));
  }
  if (vars[0].size() != D)
    throw StructureError(node_name(0) + ": root must cover all " + std::to_string(D) + " variables");

  return RCModel(std::move(unary), TreeSpec(std::move(nodes), 0), std::move(tables));
}

RCModel read_model(const std::string& path) { return parse_model(read_file(path)); }

namespace {

json tree_json(const TreeSpec& tree, int id, const RCModel* model) {
  json o;
  std::vector<std::size_t> vs = tree.leaf_set(id);
  o["vars"] = vs;
  const TreeNode& n = tree.node(id);
  if (!n.is_leaf()) o["children"] = json::array({tree_json(tree, n.left, model), tree_json(tree, n.right, model)});
  o["log_f"] = nullptr;
  if (model && model->table(id)) {
    json f = json::array();
    for (double v : model->table(id)->log_values()) f.push_back(log_json(v));
    o["log_f"] = std::move(f);
  }
  return o;
}

}  // namespace

std::string model_to_json(const RCModel& model) {
  json doc;
  doc["num_vars"] = model.num_vars();
  json u = json::array();
  for (const Unary& x : model.unary()) u.push_back(json::array({log_json(x.off), log_json(x.on)}));
  doc["unaries"] = std::move(u);
  doc["tree"] = tree_json(model.tree(), model.tree().root(), &model);
  return doc.dump(1) + "\n";
}

std::string tree_to_json(const TreeSpec& tree) {
  return tree_json(tree, tree.root(), nullptr).dump(1) + "\n";
}

// ---------------------------------------------------------------- matching

namespace {

std::vector<CardinalityTable> count_tables(const json& doc, const std::string& axis, std::size_t count,
                                           std::size_t n) {
  const std::string allowed_key = axis + "_allowed", log_key = axis + "_log_f";
  const bool has_allowed = doc.contains(allowed_key), has_log = doc.contains(log_key);
  if (has_allowed && has_log)
    throw ParseError("matching: give only one of \"" + allowed_key + "\" and \"" + log_key + "\"");
  if (!has_allowed && !has_log) return std::vector<CardinalityTable>(count, CardinalityTable::uniform(n));

  const std::string& key = has_allowed ? allowed_key : log_key;
  const json& v = doc[key];
  if (!v.is_array()) throw ParseError("matching: \"" + key + "\" must be an array");
  const bool per_line = !v.empty() && v[0].is_array();
  if (per_line && v.size() != count)
    throw ParseError("matching: \"" + key + "\" needs " + std::to_string(count) + " lists");

  auto one = [&](const json& entry, const std::string& where) -> CardinalityTable {
    try {
      if (has_allowed) {
        if (!entry.is_array()) throw ParseError(where + ": expected a list of counts");
        std::vector<std::size_t> allowed;
        for (const json& c : entry) {
          if (!c.is_number_unsigned()) throw ParseError(where + ": counts must be non-negative integers");
          allowed.push_back(c.get<std::size_t>());
        }
        return hard_count_table(n, allowed);
      }
      std::vector<double> f = log_vector(entry, where);
      if (f.size() != n + 1)
        throw ParseError(where + ": expected " + std::to_string(n + 1) + " entries, got " + std::to_string(f.size()));
      return CardinalityTable(std::move(f));
    } catch (const ArgumentError& e) {
      throw ParseError(where + ": " + e.what());
    }
  };

  std::vector<CardinalityTable> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(per_line ? one(v[i], key + "[" + std::to_string(i) + "]") : one(v, key));
  return out;
}

}  // namespace

MatchingModel parse_matching(const std::string& text) {
  const json doc = parse_json(text, "matching");
  if (!doc.is_object() || !doc.contains("theta") || !doc["theta"].is_array() || doc["theta"].empty())
    throw ParseError("matching: \"theta\" must be a non-empty array of rows");
  const json& t = doc["theta"];
  const std::size_t R = t.size();
  if (!t[0].is_array() || t[0].empty()) throw ParseError("matching: theta rows must be non-empty arrays");
  const std::size_t C = t[0].size();
  std::vector<double> theta;
  for (std::size_t i = 0; i < R; ++i) {
    if (!t[i].is_array() || t[i].size() != C)
      throw ParseError("matching: theta row " + std::to_string(i) + " does not have " + std::to_string(C) + " entries");
    for (const json& x : t[i]) {
      if (!x.is_number()) throw ParseError("matching: theta row " + std::to_string(i) + " has a non-number");
      theta.push_back(x.get<double>());
    }
  }
  return MatchingModel(R, C, std::move(theta), count_tables(doc, "row", R, C),
                       count_tables(doc, "col", C, R));
}

MatchingModel read_matching(const std::string& path) { return parse_matching(read_file(path)); }

// ---------------------------------------------------------------- text formats

namespace {

std::string trimmed(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset parse_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trimmed(line);
    if (line.empty()) continue;
    if (data.rows.empty()) data.num_vars = line.size();
    if (line.size() != data.num_vars)
      throw ParseError("dataset line " + std::to_string(lineno) + ": width " + std::to_string(line.size()) +
                       ", expected " + std::to_string(data.num_vars));
    Sample y(line.size());
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] != '0' && line[i] != '1')
        throw ParseError("dataset line " + std::to_string(lineno) + ": unexpected character '" +
                         std::string(1, line[i]) + "'");
      y[i] = line[i] == '1';
    }
    data.rows.push_back(std::move(y));
  }
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::istringstream in(read_file(path));
  return parse_dataset(in);
}

std::string dataset_to_text(const Dataset& data) {
  std::string out;
  out.reserve(data.size() * (data.num_vars + 1));
  for (const Sample& y : data.rows) {
    for (unsigned char v : y) out.push_back(v ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

std::vector<Bag> parse_bags(std::istream& in) {
  std::vector<Bag> bags;
  std::string line;
  std::size_t lineno = 0, features = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trimmed(line);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "bag file line " + std::to_string(lineno);
    std::istringstream ls(line);
    if (line.rfind("label", 0) == 0) {
      std::string word, extra;
      int t = -1;
      ls >> word >> t;
      if (word != "label" || (t != 0 && t != 1) || ls.fail() || (ls >> extra))
        throw ParseError(where + ": header must be \"label 0\" or \"label 1\"");
      bags.push_back(Bag{features, {}, t});
      continue;
    }
    if (bags.empty()) throw ParseError(where + ": feature row before the first label header");
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(where + ": \"" + tok + "\" is not a number");
      }
      if (!std::isfinite(row.back())) throw ParseError(where + ": features must be finite");
    }
    if (features == 0) {
      features = row.size();
      for (Bag& b : bags) b.num_features = features;
    }
    if (row.size() != features)
      throw ParseError(where + ": " + std::to_string(row.size()) + " features, expected " + std::to_string(features));
    Bag& b = bags.back();
    b.features.insert(b.features.end(), row.begin(), row.end());
  }
  for (std::size_t i = 0; i < bags.size(); ++i)
    if (bags[i].features.empty()) throw ParseError("bag " + std::to_string(i) + " has no instances");
  return bags;
}

std::vector<Bag> read_bags(const std::string& path) {
  std::istringstream in(read_file(path));
  return parse_bags(in);
}

// ---------------------------------------------------------------- CSV

std::string format_double(double v) {
  if (v == kNegInf) return "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string marginals_to_csv(const InferenceResult& r) {
  std::string out = "kind,index,count,value\n";
  for (std::size_t d = 0; d < r.leaf_marginals.size(); ++d)
    out += "marginal," + std::to_string(d) + ",1," + format_double(r.leaf_marginals[d]) + "\n";
  for (std::size_t id = 0; id < r.count_marginals.size(); ++id) {
    const auto& p = r.count_marginals[id].probs;
    for (std::size_t c = 0; c < p.size(); ++c)
      out += "count," + std::to_string(id) + "," + std::to_string(c) + "," + format_double(p[c]) + "\n";
  }
  out += "log_z,,," + format_double(r.log_z) + "\n";
  return out;
}

InferenceResult parse_marginals_csv(std::istream& in) {
  InferenceResult r;
  std::string line;
  std::getline(in, line);
  if (trimmed(line) != "kind,index,count,value") throw ParseError("marginals CSV: bad header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trimmed(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw ParseError("marginals CSV line " + std::to_string(lineno) + ": expected 4 fields");
    try {
      const double v = std::stod(f[3]);
      if (f[0] == "marginal") {
        const auto d = std::stoul(f[1]);
        if (r.leaf_marginals.size() <= d) r.leaf_marginals.resize(d + 1);
        r.leaf_marginals[d] = v;
      } else if (f[0] == "count") {
        const auto id = std::stoul(f[1]), c = std::stoul(f[2]);
        if (r.count_marginals.size() <= id) r.count_marginals.resize(id + 1);
        auto& p = r.count_marginals[id].probs;
        if (p.size() <= c) p.resize(c + 1);
        p[c] = v;
      } else if (f[0] == "log_z") {
        r.log_z = v;
      } else {
        throw ParseError("unknown kind \"" + f[0] + "\"");
      }
    } catch (const std::logic_error&) {
      throw ParseError("marginals CSV line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return r;
}

// ---------------------------------------------------------------- files

void write_file_atomic(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content << std::flush;
    return;
  }
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArgumentError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw ArgumentError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ArgumentError("cannot move output into place at " + path);
  }
}

std::string read_file(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace rcm::io
