#include <algorithm>
#include <iomanip>
#include <sstream>

#include "pnode/harness.hpp"

namespace pnode {

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

}  // namespace

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "model,domain,attack,target,shots,mean_dice,std_dice\n";
  for (const auto& r : rows) {
    os << r.model << ',' << r.domain << ',' << r.attack << ',' << r.target << ',' << r.shots << ','
       << fixed(r.mean_dice, 6) << ',' << fixed(r.std_dice, 6) << '\n';
  }
  return os.str();
}

std::string bar_chart_svg(const std::vector<ResultRow>& rows, const std::string& domain, const std::string& title) {
  std::vector<std::string> attacks, models;
  for (const auto& r : rows) {
    if (r.domain != domain) continue;
    if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) attacks.push_back(r.attack);
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
  }
  const double bar = 22.0, gap = 26.0, left = 56.0, top = 40.0, plot_h = 220.0;
  const double group_w = bar * static_cast<double>(std::max<std::size_t>(models.size(), 1)) + gap;
  const double width = left + group_w * static_cast<double>(attacks.size()) + 140.0;
  const double height = top + plot_h + 60.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\"" << fixed(height, 0)
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fixed(left, 1) << "\" y=\"20\" font-size=\"13\">" << escape_xml(title) << "</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick * 0.25;
    const double y = top + plot_h * (1.0 - v);
    os << "<line x1=\"" << fixed(left, 1) << "\" x2=\"" << fixed(left + group_w * attacks.size(), 1) << "\" y1=\""
       << fixed(y, 1) << "\" y2=\"" << fixed(y, 1) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << fixed(left - 6, 1) << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">"
       << fixed(v, 2) << "</text>\n";
  }
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    const double x0 = left + gap / 2 + group_w * static_cast<double>(a);
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const ResultRow& r) {
        return r.domain == domain && r.attack == attacks[a] && r.model == models[m];
      });
      if (it == rows.end()) continue;
      const double v = std::clamp(it->mean_dice, 0.0, 1.0);
      const double h = plot_h * v;
      const double x = x0 + bar * static_cast<double>(m);
      os << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(top + plot_h - h, 1) << "\" width=\""
         << fixed(bar - 2, 1) << "\" height=\"" << fixed(h, 1) << "\" fill=\"" << kPalette[m % 6] << "\"><title>"
         << escape_xml(models[m] + " " + attacks[a]) << ": " << fixed(it->mean_dice, 4) << " +/- "
         << fixed(it->std_dice, 4) << "</title></rect>\n";
      const double err = plot_h * it->std_dice;
      const double cx = x + (bar - 2) / 2;
      os << "<line x1=\"" << fixed(cx, 1) << "\" x2=\"" << fixed(cx, 1) << "\" y1=\""
         << fixed(top + plot_h - h - err, 1) << "\" y2=\"" << fixed(top + plot_h - h + err, 1)
         << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << fixed(x0 + bar * models.size() / 2.0, 1) << "\" y=\"" << fixed(top + plot_h + 16, 1)
       << "\" text-anchor=\"middle\">" << escape_xml(attacks[a]) << "</text>\n";
  }
  const double lx = left + group_w * static_cast<double>(attacks.size()) + 16;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const double y = top + 14.0 * static_cast<double>(m);
    os << "<rect x=\"" << fixed(lx, 1) << "\" y=\"" << fixed(y, 1) << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[m % 6] << "\"/>\n";
    os << "<text x=\"" << fixed(lx + 14, 1) << "\" y=\"" << fixed(y + 9, 1) << "\">" << escape_xml(models[m])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pnode
