#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rcm/convtree.hpp"
#include "rcm/learning.hpp"
#include "rcm/matching.hpp"
#include "rcm/model.hpp"

namespace rcm::io {

// Model JSON. Tree nodes are numbered in preorder from the root (id 0); error
// messages and the count rows of the marginals CSV use the same numbering.
RCModel parse_model(const std::string& text);
RCModel read_model(const std::string& path);
std::string model_to_json(const RCModel& model);

// Matching problem JSON. row_allowed / col_allowed are either one list shared
// by every row (column) or one list per row (column); the same holds for
// row_log_f / col_log_f. Rows or columns with neither are unconstrained.
MatchingModel parse_matching(const std::string& text);
MatchingModel read_matching(const std::string& path);

// One '0'/'1' string per line. Blank lines are ignored.
Dataset parse_dataset(std::istream& in);
Dataset read_dataset(const std::string& path);
std::string dataset_to_text(const Dataset& data);

// "label t" starts a bag; every following non-blank line is one instance's
// whitespace-separated features. Lines starting with '#' are comments.
std::vector<Bag> parse_bags(std::istream& in);
std::vector<Bag> read_bags(const std::string& path);

// kind,index,count,value rows: "marginal,d,1,P(y_d=1)" per variable,
// "count,node,c,P(count=c)" per node, and a final "log_z,,,value".
std::string marginals_to_csv(const InferenceResult& result);
InferenceResult parse_marginals_csv(std::istream& in);

std::string tree_to_json(const TreeSpec& tree);

std::string format_double(double v);

// Writes through a temporary file in the same directory and renames it into
// place, so a failed run never leaves a partial file. "-" means stdout.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace rcm::io
