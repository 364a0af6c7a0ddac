#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gfc/report.hpp"

using namespace gfc;

namespace {

// Minimal XML check: every opening tag is closed in order and attribute quotes balance.
bool well_formed(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const std::size_t j = s.find('>', i);
    if (j == std::string::npos) return false;
    std::string tag = s.substr(i + 1, j - i - 1);
    if (std::count(tag.begin(), tag.end(), '"') % 2) return false;
    if (tag.find('<') != std::string::npos) return false;
    if (tag.starts_with("?") || tag.starts_with("!")) {
    } else if (tag.starts_with("/")) {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else if (!tag.ends_with("/")) {
      stack.push_back(tag.substr(0, tag.find_first_of(" \n")));
    }
    i = j + 1;
  }
  return stack.empty();
}

}  // namespace

TEST(Report, CsvHeaderAndRows) {
  CsvTable t("density", {"R", "mean", "flag"});
  t.row(8, 0.125, true);
  t.row(16, 1.0 / 3, false);
  std::istringstream in(t.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# schema: gfc.density.v1");
  std::getline(in, line);
  EXPECT_EQ(line, "R,mean,flag");
  std::getline(in, line);
  EXPECT_EQ(line, "8,0.125,1");
  std::getline(in, line);
  EXPECT_EQ(std::stod(line.substr(3, line.size() - 5)), 1.0 / 3);
  EXPECT_THROW(t.row(1, 2.0), InvalidArgument);
}

TEST(Report, DoublesRoundTrip) {
  for (double v : {0.1, 1.0 / 3, 6.02214076e23, -2.5e-310}) EXPECT_EQ(std::strtod(fmt_double(v).c_str(), nullptr), v);
}

TEST(Report, SvgIsWellFormed) {
  svg::Plot p;
  p.title = "E[N^3] < R^6 & more";
  p.xlabel = "R";
  p.ylabel = "\"moment\"";
  p.logx = p.logy = true;
  svg::Series s;
  s.x = {2, 4, 8};
  s.y = {1, 10, 100};
  s.err_lo = {0.5, 5, 50};
  s.err_hi = {2, 20, 200};
  p.series = {s};
  const std::string out = svg::render(p);
  EXPECT_TRUE(out.starts_with("<svg"));
  EXPECT_TRUE(well_formed(out));
  EXPECT_NE(out.find("&lt; R^6 &amp; more"), std::string::npos);
  EXPECT_TRUE(well_formed(svg::qq_plot({-1.5, -0.2, 0.1, 1.7}, "qq")));
  EXPECT_TRUE(well_formed(svg::loglog_plot({1, 2, 4}, {1, 4, 16}, 2, 0, "t", "x", "y")));
  EXPECT_TRUE(well_formed(svg::heatmap({0.1, 0.2}, {0.3, 0.4}, {1e-3, 1e-1}, "h", "x", "y")));
}

TEST(Report, JsonFileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gfc_report_test";
  std::filesystem::create_directories(dir);
  const nlohmann::json j = {{"schema", "gfc.report.sample.v1"}, {"value", 0.1}, {"claims_pass", true}};
  write_json(dir / "r.json", j);
  std::ifstream in(dir / "r.json");
  const auto back = nlohmann::json::parse(in);
  EXPECT_EQ(back, j);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(write_text(dir / "missing" / "x.txt", "x"), IoError);
}
