#pragma once

// Plain-text artifacts: comma-separated tables with a header row, flat
// `key = value` files, and ISO-8601 dates. Numbers are written in the
// shortest form that parses back to the same double.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "karst/model.hpp"

namespace karst::io {

model::Date parse_date(std::string_view text);
std::string format_date(model::Date d);
std::string format_double(double v);

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // source line of each row

  /// Index of a column; throws Error(InvalidInput) naming the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
  std::vector<double> numbers(std::string_view name) const;
  std::vector<model::Date> dates(std::string_view name = "date") const;
};

CsvTable read_csv(const std::string& path);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  CsvWriter& cell(const std::string& s);
  CsvWriter& cell(double v);
  void end_row();

 private:
  std::string path_;
  std::string buffer_;
  bool row_started_ = false;
  friend void flush(CsvWriter&);

 public:
  ~CsvWriter();
};

using KeyValues = std::map<std::string, std::string>;

/// `key = value` or `key: value` lines; '#' starts a comment.
KeyValues read_key_values(const std::string& path);
void write_key_values(const std::string& path, const std::vector<std::pair<std::string, std::string>>& entries);

/// Forcing preprocessing keys (c_m, t0, interception_mm, pet_method,
/// warmup_days, initial_storage = e_min|empty) and catchment keys (area_1..3, area_total, l_hyd_1..3, k_b).
/// Catchment keys are required.
struct ModelConfig {
  model::ForcingConfig forcing;
  model::CatchmentMeta catchment;
  bool empty_stores = false;  // `initial_storage = empty`: start all stores at zero
};

ModelConfig parse_model_config(const KeyValues& kv, const std::string& source = "model config");
ModelConfig read_model_config(const std::string& path);
void write_model_config(const std::string& path, const ModelConfig& cfg);

model::ForcingSeries read_forcing(const std::string& path);
void write_forcing(const std::string& path, const model::ForcingSeries& f);

/// Precomputed source terms: `date,s1_mm,s2_mm,s3_mm`.
model::EffectiveInputSeries read_effective_input(const std::string& path);

struct Observations {
  std::vector<model::Date> dates;
  std::vector<double> q_m3d;
};

/// Reads `date,q_obs_m3d` (a `q_total_m3d` column is accepted as well).
Observations read_observations(const std::string& path);
void write_observations(const std::string& path, const Observations& obs);

/// `date,q_total_m3d,q_total_ls[,component columns]`.
void write_discharge(const std::string& path, const model::DischargeSeries& q);

/// Matrix with one row per column of `m`, under the given header.
void write_columns(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_columns(const CsvTable& table, const std::vector<std::string>& names);

/// 64-bit FNV-1a hash of a file's bytes, as hex.
std::string file_checksum(const std::string& path);

}  // namespace karst::io
