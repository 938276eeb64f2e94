#pragma once

#include "nscert/certificates.hpp"
#include "nscert/grid.hpp"
#include "nscert/objective.hpp"
#include "nscert/pde.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nscert {

/// Full-precision scientific formatting; round-trips exactly through strtod.
inline std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17e", v);
    return buf;
}

inline std::string fmt_int(long long v) { return std::to_string(v); }

// ---------------------------------------------------------------------------
// grid dumps: two-line header ("nx ny h", then a '#' legend), then one row
// of space-separated full-precision values per grid line (j ascending).
// ---------------------------------------------------------------------------

inline std::string dump_field_string(const Grid2D& g, const Field& v,
                                     const std::string& legend) {
    check_field(g, v, "dump_field");
    std::ostringstream os;
    os << g.nx << ' ' << g.ny << ' ' << fmt_full(g.h) << '\n';
    os << "# " << legend << "; E cells=" << g.mask_E.count()
       << " DE cells=" << g.mask_DE.count() << '\n';
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            if (i) os << ' ';
            os << fmt_full(v[g.node_index(i, j)]);
        }
        os << '\n';
    }
    return os.str();
}

inline void dump_field(const std::string& path, const Grid2D& g, const Field& v,
                       const std::string& legend) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dump_field: cannot open " + path);
    f << dump_field_string(g, v, legend);
}

struct FieldDump {
    int nx = 0, ny = 0;
    double h = 0.0;
    Field values;
};

inline FieldDump load_field_string(const std::string& text) {
    std::istringstream is(text);
    FieldDump d;
    std::string header;
    if (!std::getline(is, header)) throw std::runtime_error("load_field: empty dump");
    {
        std::istringstream hs(header);
        if (!(hs >> d.nx >> d.ny >> d.h) || d.nx <= 0 || d.ny <= 0 || !(d.h > 0.0))
            throw std::runtime_error("load_field: malformed 'nx ny h' header");
    }
    std::string legend;
    if (!std::getline(is, legend) || legend.empty() || legend[0] != '#')
        throw std::runtime_error("load_field: missing '#' legend line");
    d.values.resize(static_cast<Eigen::Index>(d.nx) * d.ny);
    for (Eigen::Index k = 0; k < d.values.size(); ++k)
        if (!(is >> d.values[k]))
            throw std::runtime_error("load_field: truncated value matrix");
    return d;
}

inline FieldDump load_field(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_field: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return load_field_string(os.str());
}

inline Field load_field_on(const Grid2D& g, const std::string& path) {
    const FieldDump d = load_field(path);
    if (d.nx != g.nx || d.ny != g.ny)
        throw std::runtime_error("load_field: dump dimensions do not match grid: " + path);
    return d.values;
}

// ---------------------------------------------------------------------------
// CSV: comma-separated, header row, full-precision scientific notation
// ---------------------------------------------------------------------------

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> columns) : cols_(std::move(columns)) {
        for (std::size_t i = 0; i < cols_.size(); ++i) {
            if (i) os_ << ',';
            os_ << cols_[i];
        }
        os_ << '\n';
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != cols_.size())
            throw std::invalid_argument("CsvWriter: wrong cell count");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << cells[i];
        }
        os_ << '\n';
    }

    std::string str() const { return os_.str(); }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("CsvWriter: cannot open " + path);
        f << os_.str();
    }

  private:
    std::vector<std::string> cols_;
    std::ostringstream os_;
};

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
    CsvWriter w({"iter", "j", "step", "stat", "vi_min"});
    for (const auto& r : trace)
        w.row({fmt_int(r.iter), fmt_full(r.j), fmt_full(r.step), fmt_full(r.stat),
               fmt_full(r.vi_min)});
    return w.str();
}

inline std::string solve_report_csv(const SolveReport& r) {
    CsvWriter w({"iterations", "final_residual", "converged", "damping_events"});
    w.row({fmt_int(r.iterations), fmt_full(r.final_residual), fmt_int(r.converged ? 1 : 0),
           fmt_int(r.damping_events)});
    return w.str();
}

// ---------------------------------------------------------------------------
// stationarity report: flat key-value block and a one-row CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, std::string>> report_items(
    const StationarityReport& r) {
    std::vector<std::pair<std::string, std::string>> kv;
    auto d = [&](const char* k, double v) { kv.emplace_back(k, fmt_full(v)); };
    auto b = [&](const char* k, bool v) { kv.emplace_back(k, v ? "1" : "0"); };
    auto i = [&](const char* k, long long v) { kv.emplace_back(k, fmt_int(v)); };
    d("vi_min", r.vi_min);
    i("vi_samples", r.vi_samples);
    i("seed", static_cast<long long>(r.seed));
    i("vi_worst_index", r.vi_worst_index);
    d("sys_residual", r.sys_residual);
    d("zeta_violation", r.zeta_violation);
    d("zeta_violation_band", r.zeta_violation_band);
    d("kkt_interior_residual", r.kkt_interior_residual);
    d("off_e_w_residual", r.off_e_w_residual);
    d("sp_chain_violation", r.sp_chain_violation);
    d("sp_chain_band", r.sp_chain_band);
    d("sign_violation_convex", r.sign_violation_convex);
    d("sign_violation_concave", r.sign_violation_concave);
    d("sign_violation_active", r.sign_violation_active);
    d("sign_band_convex", r.sign_band_convex);
    d("sign_band_concave", r.sign_band_concave);
    d("sign_band_active", r.sign_band_active);
    d("cq_ha_near_zero", r.cq_ha_near_zero);
    d("cq_ha_integral", r.cq_ha_integral);
    d("cq_ha_band", r.cq_ha_band);
    d("cq_cc_measure", r.cq_cc_measure);
    d("cq_cc_band", r.cq_cc_band);
    b("data_condition_ok", r.data_condition_ok);
    d("data_margin_E", r.data_margin_E);
    d("data_margin_DE", r.data_margin_DE);
    d("data_state_max", r.data_state_max);
    d("measure_A", r.measure_A);
    d("measure_A_closure", r.measure_A_closure);
    d("measure_A_ring", r.measure_A_ring);
    d("measure_Dn_convex", r.measure_Dn_convex);
    d("measure_Dn_concave", r.measure_Dn_concave);
    d("grid_band_unit", r.grid_band_unit);
    b("equivalence_ok", r.equivalence_ok);
    d("des_violation", r.des_violation);
    b("certified", r.certified);
    return kv;
}

}  // namespace detail

inline std::string report_kv(const StationarityReport& r) {
    std::ostringstream os;
    os << "# nodal fields are the canonical representatives; set measures are\n"
          "# cell counts x h^2 with perimeter x h uncertainty bands; the VI is\n"
          "# sampled, so the recorded seed reproduces the direction family\n";
    for (const auto& [k, v] : detail::report_items(r)) os << k << " = " << v << '\n';
    return os.str();
}

inline std::string report_csv(const StationarityReport& r) {
    const auto items = detail::report_items(r);
    std::vector<std::string> cols, cells;
    for (const auto& [k, v] : items) {
        cols.push_back(k);
        cells.push_back(v);
    }
    CsvWriter w(cols);
    w.row(cells);
    return w.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_text: cannot open " + path);
    f << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_text: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace nscert
