#include "restorl/runstore.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "restorl/hash.hpp"
#include "restorl/io.hpp"

namespace restorl {

using nlohmann::json;

namespace {

constexpr int kLogVersion = 1;

json record_to_json(const MetricsRecord& r) {
  json extra = json::object();
  for (const auto& [k, v] : r.extra) extra[k] = v;
  return json{{"iteration", r.iteration}, {"psnr", r.psnr},       {"ssim", r.ssim},
              {"frechet_proxy", r.frechet_proxy}, {"ot_cost", r.ot_cost},
              {"mean_reward", r.mean_reward},     {"extra", extra}};
}

MetricsRecord record_from_json(const json& j) {
  MetricsRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.psnr = j.at("psnr").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.frechet_proxy = j.at("frechet_proxy").get<double>();
  r.ot_cost = j.at("ot_cost").get<double>();
  r.mean_reward = j.at("mean_reward").get<double>();
  for (const auto& [k, v] : j.at("extra").items()) r.extra[k] = v.get<double>();
  return r;
}

}  // namespace

void MetricsRecord::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(psnr) || !finite(ssim) || !finite(frechet_proxy) || !finite(ot_cost) ||
      !finite(mean_reward)) {
    throw std::invalid_argument("MetricsRecord: non-finite metric value");
  }
  for (const auto& [k, v] : extra) {
    if (!finite(v)) throw std::invalid_argument("MetricsRecord: non-finite extra '" + k + "'");
  }
}

RunStore RunStore::create(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  RunStore store;
  store.dir_ = dir;
  const json header = {{"format", "restorl-metrics"}, {"version", kLogVersion}};
  write_text_file(store.log_path(), header.dump() + "\n");
  return store;
}

RunStore RunStore::open(const std::filesystem::path& dir) {
  RunStore store;
  store.dir_ = dir;
  const auto records = store.read_all();  // validates header + checksums
  if (!records.empty()) store.last_iteration_ = records.back().iteration;
  return store;
}

void RunStore::append(const MetricsRecord& record) {
  record.validate();
  if (record.iteration <= last_iteration_) {
    throw std::invalid_argument("RunStore: iteration must increase (got " +
                                std::to_string(record.iteration) + " after " +
                                std::to_string(last_iteration_) + ")");
  }
  const std::string payload = record_to_json(record).dump();
  const json line = {{"checksum", fnv1a_hex(payload.data(), payload.size())},
                     {"record", record_to_json(record)}};
  std::ofstream out(log_path(), std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("RunStore: cannot append to " + log_path().string());
  out << line.dump() << "\n";
  last_iteration_ = record.iteration;
}

std::vector<MetricsRecord> RunStore::read_all() const {
  std::ifstream in(log_path(), std::ios::binary);
  if (!in) throw LogIntegrityError("metrics log missing: " + log_path().string());
  std::string line;
  if (!std::getline(in, line)) throw LogIntegrityError("metrics log is empty (no header)");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception&) {
    throw LogIntegrityError("metrics log header is not valid JSON");
  }
  if (header.value("format", "") != "restorl-metrics" ||
      header.value("version", -1) != kLogVersion) {
    throw LogIntegrityError("metrics log header mismatch");
  }

  std::vector<MetricsRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw LogIntegrityError("metrics log line " + std::to_string(lineno) + " is not valid JSON");
    }
    const std::string payload = j.at("record").dump();
    if (fnv1a_hex(payload.data(), payload.size()) != j.at("checksum").get<std::string>()) {
      throw LogIntegrityError("metrics log checksum mismatch at line " + std::to_string(lineno));
    }
    records.push_back(record_from_json(j.at("record")));
  }
  return records;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Minimal line plot; fixed canvas, deterministic output bytes.
std::string render_svg_curve(const std::vector<double>& xs, const std::vector<double>& ys,
                             const std::string& title) {
  const int width = 640, height = 360, margin = 48;
  double xmin = xs.front(), xmax = xs.back();
  double ymin = ys.front(), ymax = ys.front();
  for (double y : ys) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double yspan = ymax - ymin;
  ymin -= 0.05 * yspan;
  ymax += 0.05 * yspan;

  auto px = [&](double x) {
    return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
  };
  auto py = [&](double y) {
    return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"monospace\" font-size=\"14\">" + title + "</text>\n";
  svg += "<line x1=\"" + format_double(margin) + "\" y1=\"" + format_double(height - margin) +
         "\" x2=\"" + format_double(width - margin) + "\" y2=\"" +
         format_double(height - margin) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_double(margin) + "\" y1=\"" + format_double(margin) + "\" x2=\"" +
         format_double(margin) + "\" y2=\"" + format_double(height - margin) +
         "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + format_double(margin) + "\" y=\"" + format_double(height - margin + 16) +
         "\" font-family=\"monospace\" font-size=\"11\">" + format_double(xmin) + "</text>\n";
  svg += "<text x=\"" + format_double(width - margin) + "\" y=\"" +
         format_double(height - margin + 16) + "\" text-anchor=\"end\" "
         "font-family=\"monospace\" font-size=\"11\">" + format_double(xmax) + "</text>\n";
  svg += "<text x=\"" + format_double(margin - 4) + "\" y=\"" + format_double(height - margin) +
         "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">" +
         format_double(ymin) + "</text>\n";
  svg += "<text x=\"" + format_double(margin - 4) + "\" y=\"" + format_double(margin) +
         "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">" +
         format_double(ymax) + "</text>\n";
  svg += "<polyline fill=\"none\" stroke=\"#2060c0\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    svg += format_double(px(xs[i])) + "," + format_double(py(ys[i]));
    if (i + 1 < xs.size()) svg += " ";
  }
  svg += "\"/>\n</svg>\n";
  return svg;
}

}  // namespace

void render_report(const std::filesystem::path& run_dir) {
  const RunStore store = RunStore::open(run_dir);
  const auto records = store.read_all();
  const auto report_dir = run_dir / "report";
  std::filesystem::create_directories(report_dir);

  if (records.empty()) {
    write_text_file(report_dir / "report.txt",
                    "empty run: no metrics records have been logged yet\n");
    return;
  }

  std::string table;
  table += "iter      reward        psnr        ssim     frechet          ot\n";
  for (const auto& r : records) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%4d %11.5g %11.5g %11.5g %11.5g %11.5g\n", r.iteration,
                  r.mean_reward, r.psnr, r.ssim, r.frechet_proxy, r.ot_cost);
    table += buf;
  }
  const auto& last = records.back();
  table += "\nfinal: reward=" + format_double(last.mean_reward) +
           " psnr=" + format_double(last.psnr) + " ssim=" + format_double(last.ssim) +
           " frechet=" + format_double(last.frechet_proxy) +
           " ot=" + format_double(last.ot_cost) + "\n";
  write_text_file(report_dir / "report.txt", table);

  std::vector<double> xs, reward, psnr_curve;
  for (const auto& r : records) {
    xs.push_back(r.iteration);
    reward.push_back(r.mean_reward);
    psnr_curve.push_back(r.psnr);
  }
  write_text_file(report_dir / "reward_curve.svg", render_svg_curve(xs, reward, "mean reward"));
  write_text_file(report_dir / "psnr_curve.svg", render_svg_curve(xs, psnr_curve, "psnr (dB)"));
}

}  // namespace restorl
