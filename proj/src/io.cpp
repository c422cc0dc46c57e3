#include "karst/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "karst/error.hpp"

namespace karst::io {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw Error(ErrorKind::InvalidInput, where + ": cannot parse number '" + text + "'");
  return v;
}

}  // namespace

model::Date parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  std::istringstream ss{std::string(text)};
  ss >> y >> dash1 >> m >> dash2 >> d;
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ss || dash1 != '-' || dash2 != '-' || !ss.eof() || !ymd.ok())
    throw Error(ErrorKind::InvalidInput, "invalid ISO-8601 date '" + std::string(text) + "'");
  return sys_days{ymd};
}

std::string format_date(model::Date d) {
  using namespace std::chrono;
  const year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error(ErrorKind::InvalidInput, path + ": missing column '" + std::string(name) + "'");
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header)
    if (h == name) return true;
  return false;
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  return parse_double(rows[row][col], path + ":" + std::to_string(line_numbers[row]));
}

std::vector<double> CsvTable::numbers(std::string_view name) const {
  const std::size_t c = column(name);
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = number(r, c);
  return out;
}

std::vector<model::Date> CsvTable::dates(std::string_view name) const {
  const std::size_t c = column(name);
  std::vector<model::Date> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    try {
      out[r] = parse_date(rows[r][c]);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidInput, path + ":" + std::to_string(line_numbers[r]) + ": " + e.what());
    }
  }
  return out;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  CsvTable t;
  t.path = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw Error(ErrorKind::InvalidInput, path + ":" + std::to_string(lineno) + ": expected " +
                                               std::to_string(t.header.size()) + " fields, found " +
                                               std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw Error(ErrorKind::InvalidInput, path + ": empty file");
  return t;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header) : path_(path) {
  for (std::size_t i = 0; i < header.size(); ++i) buffer_ += (i ? "," : "") + header[i];
  buffer_ += '\n';
}

CsvWriter& CsvWriter::cell(const std::string& s) {
  if (row_started_) buffer_ += ',';
  buffer_ += s;
  row_started_ = true;
  return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }

void CsvWriter::end_row() {
  buffer_ += '\n';
  row_started_ = false;
}

CsvWriter::~CsvWriter() {
  std::ofstream out(path_, std::ios::binary);
  out << buffer_;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto sep = line.find_first_of("=:");
    if (sep == std::string::npos)
      throw Error(ErrorKind::InvalidInput, path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    kv[trim(line.substr(0, sep))] = trim(line.substr(sep + 1));
  }
  return kv;
}

void write_key_values(const std::string& path, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + path);
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

ModelConfig parse_model_config(const KeyValues& kv, const std::string& source) {
  ModelConfig cfg;
  auto number = [&](const std::string& key) { return parse_double(kv.at(key), source + " key '" + key + "'"); };
  auto optional = [&](const std::string& key, double& target) {
    if (kv.count(key)) target = number(key);
  };
  auto required = [&](const std::string& key) {
    if (!kv.count(key)) throw Error(ErrorKind::Config, source + ": missing required key '" + key + "'");
    return number(key);
  };
  optional("c_m", cfg.forcing.c_m);
  optional("t0", cfg.forcing.t0);
  optional("interception_mm", cfg.forcing.interception_mm);
  if (kv.count("warmup_days")) cfg.forcing.warmup_days = static_cast<int>(number("warmup_days"));
  if (kv.count("pet_method")) {
    const auto& m = kv.at("pet_method");
    if (m == "none") cfg.forcing.pet_method = model::PetMethod::None;
    else if (m == "thornthwaite") cfg.forcing.pet_method = model::PetMethod::Thornthwaite;
    else throw Error(ErrorKind::Config, source + ": unknown pet_method '" + m + "'");
  }
  if (kv.count("initial_storage")) {
    const auto& m = kv.at("initial_storage");
    if (m == "empty") cfg.empty_stores = true;
    else if (m != "e_min") throw Error(ErrorKind::Config, source + ": unknown initial_storage '" + m + "'");
  }
  for (int i = 0; i < model::kHydrotopes; ++i) {
    cfg.catchment.area_m2[i] = required("area_" + std::to_string(i + 1));
    cfg.catchment.l_hyd_m[i] = required("l_hyd_" + std::to_string(i + 1));
  }
  cfg.catchment.total_area_m2 = required("area_total");
  cfg.catchment.k_b = required("k_b");
  cfg.catchment.validate();
  return cfg;
}

ModelConfig read_model_config(const std::string& path) { return parse_model_config(read_key_values(path), path); }

void write_model_config(const std::string& path, const ModelConfig& cfg) {
  const auto& f = cfg.forcing;
  const auto& c = cfg.catchment;
  std::vector<std::pair<std::string, std::string>> e = {
      {"c_m", format_double(f.c_m)},
      {"t0", format_double(f.t0)},
      {"interception_mm", format_double(f.interception_mm)},
      {"pet_method", f.pet_method == model::PetMethod::Thornthwaite ? "thornthwaite" : "none"},
      {"warmup_days", std::to_string(f.warmup_days)},
      {"initial_storage", cfg.empty_stores ? "empty" : "e_min"},
  };
  for (int i = 0; i < model::kHydrotopes; ++i) e.emplace_back("area_" + std::to_string(i + 1), format_double(c.area_m2[i]));
  e.emplace_back("area_total", format_double(c.total_area_m2));
  for (int i = 0; i < model::kHydrotopes; ++i) e.emplace_back("l_hyd_" + std::to_string(i + 1), format_double(c.l_hyd_m[i]));
  e.emplace_back("k_b", format_double(c.k_b));
  write_key_values(path, e);
}

model::ForcingSeries read_forcing(const std::string& path) {
  const auto t = read_csv(path);
  model::ForcingSeries f;
  f.dates = t.dates("date");
  f.precip_mm = t.numbers("precip_mm");
  f.temp_c = t.numbers("temp_c");
  f.validate();
  return f;
}

void write_forcing(const std::string& path, const model::ForcingSeries& f) {
  CsvWriter w(path, {"date", "precip_mm", "temp_c"});
  for (std::size_t i = 0; i < f.size(); ++i) {
    w.cell(format_date(f.dates[i])).cell(f.precip_mm[i]).cell(f.temp_c[i]);
    w.end_row();
  }
}

model::EffectiveInputSeries read_effective_input(const std::string& path) {
  const auto t = read_csv(path);
  model::EffectiveInputSeries e;
  e.dates = t.dates("date");
  for (int i = 0; i < model::kHydrotopes; ++i) {
    e.source_mm[i] = t.numbers("s" + std::to_string(i + 1) + "_mm");
    for (double v : e.source_mm[i])
      if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, path + ": non-finite source term");
  }
  e.snow_mm.assign(e.size(), 0.0);
  e.melt_mm.assign(e.size(), 0.0);
  e.pet_mm.assign(e.size(), 0.0);
  for (std::size_t i = 1; i < e.size(); ++i)
    if ((e.dates[i] - e.dates[i - 1]).count() != 1)
      throw Error(ErrorKind::InvalidInput, path + ": dates are not consecutive days at row " + std::to_string(i + 1));
  return e;
}

Observations read_observations(const std::string& path) {
  const auto t = read_csv(path);
  Observations o;
  o.dates = t.dates("date");
  o.q_m3d = t.numbers(t.has_column("q_obs_m3d") ? "q_obs_m3d" : "q_total_m3d");
  for (std::size_t i = 0; i < o.q_m3d.size(); ++i)
    if (!(o.q_m3d[i] >= 0))
      throw Error(ErrorKind::InvalidInput, path + ":" + std::to_string(t.line_numbers[i]) + ": negative discharge");
  return o;
}

void write_observations(const std::string& path, const Observations& obs) {
  CsvWriter w(path, {"date", "q_obs_m3d"});
  for (std::size_t i = 0; i < obs.dates.size(); ++i) {
    w.cell(format_date(obs.dates[i])).cell(obs.q_m3d[i]);
    w.end_row();
  }
}

void write_discharge(const std::string& path, const model::DischargeSeries& q) {
  std::vector<std::string> header = {"date", "q_total_m3d", "q_total_ls"};
  if (q.has_components) {
    for (const char* c : {"q_hyd", "q_is", "q_sec"})
      for (int i = 1; i <= model::kHydrotopes; ++i) header.push_back(std::string(c) + "_" + std::to_string(i) + "_m3d");
    header.emplace_back("q_b_m3d");
  }
  CsvWriter w(path, header);
  for (std::size_t t = 0; t < q.size(); ++t) {
    w.cell(format_date(q.dates[t])).cell(q.total_m3d[t]).cell(model::m3d_to_ls(q.total_m3d[t]));
    if (q.has_components) {
      for (const auto* trace : {&q.q_hyd_m3d, &q.q_is_m3d, &q.q_sec_m3d})
        for (int i = 0; i < model::kHydrotopes; ++i) w.cell((*trace)[i][t]);
      w.cell(q.q_b_m3d[t]);
    }
    w.end_row();
  }
}

void write_columns(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& m) {
  if (static_cast<std::size_t>(m.rows()) != header.size())
    throw Error(ErrorKind::InvalidInput, "write_columns: header does not match matrix rows");
  CsvWriter w(path, header);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) w.cell(m(r, c));
    w.end_row();
  }
}

Eigen::MatrixXd read_columns(const CsvTable& table, const std::vector<std::string>& names) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(names.size()), static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const std::size_t c = table.column(names[j]);
    for (std::size_t r = 0; r < table.rows.size(); ++r)
      m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r)) = table.number(r, c);
  }
  return m;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace karst::io
