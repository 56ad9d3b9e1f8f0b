#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "data_model.hpp"
#include "expert_layer.hpp"
#include "glm.hpp"
#include "learner.hpp"

namespace cfglmm {

/// Malformed input text: bad CSV structure, unparsable numbers, invalid JSON.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<Index> line_numbers;  // 1-based source line of each row

    std::optional<Index> column(std::string_view name) const {
        for (Index k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        return std::nullopt;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_fields(std::string_view line, Index line_no) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (Index k = 0; k < line.size(); ++k) {
        const char ch = line[k];
        if (quoted) {
            if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                cur += '"';
                ++k;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(trim(cur));
    return out;
}

}  // namespace detail

/// Comma-separated table with a header row. Blank lines are skipped; every row must
/// have as many fields as the header.
inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    Index line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_fields(line, line_no);
        if (!have_header) {
            t.header = std::move(fields);
            for (Index k = 0; k < t.header.size(); ++k) {
                if (t.header[k].empty())
                    throw ParseError("line " + std::to_string(line_no) + ": empty column name");
                for (Index j = 0; j < k; ++j)
                    if (t.header[j] == t.header[k])
                        throw ParseError("line " + std::to_string(line_no) + ": duplicate column '" + t.header[k] +
                                         "'");
            }
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header) throw ParseError("line 1: missing header row");
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return read_csv(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

/// Parses a decimal number; "nan" and "inf" are accepted and left to validation.
inline double parse_number(std::string_view s, Index line_no, std::string_view column) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && *b == '+') ++b;
    const auto [p, ec] = std::from_chars(b, e, v);
    if (s.empty() || ec != std::errc() || p != e)
        throw ParseError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                         "': not a number: '" + std::string(s) + "'");
    return v;
}

/// Shortest "%.12g" rendering; non-finite values print as nan / inf / -inf.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : path_(path), out_(path) {
        if (!out_) throw IoError("cannot write '" + path + "'");
    }

    void header(const std::vector<std::string>& cols) { row(cols); }

    void row(const std::vector<std::string>& fields) {
        for (Index k = 0; k < fields.size(); ++k) {
            if (k) out_ << ',';
            out_ << fields[k];
        }
        out_ << '\n';
        if (!out_) throw IoError("write failed on '" + path_ + "'");
    }

    void numbers(const std::vector<double>& values) {
        std::vector<std::string> f;
        f.reserve(values.size());
        for (double v : values) f.push_back(format_number(v));
        row(f);
    }

private:
    std::string path_;
    std::ofstream out_;
};

namespace detail {

inline Index require_column(const CsvTable& t, std::string_view name) {
    const auto c = t.column(name);
    if (!c) throw DataError(DataError::Kind::length_mismatch, "missing column '" + std::string(name) + "'");
    return *c;
}

inline double cell(const CsvTable& t, Index row, Index col) {
    return parse_number(t.rows[row][col], t.line_numbers[row], t.header[col]);
}

}  // namespace detail

/// Dataset from a table with columns x, y, response, optional offset; every other
/// column is a covariate, in file order.
inline Dataset dataset_from_table(const CsvTable& t, FamilyTag family) {
    const Index cx = detail::require_column(t, "x");
    const Index cy = detail::require_column(t, "y");
    const Index cr = detail::require_column(t, "response");
    const auto co = t.column("offset");
    std::vector<Index> cov_cols;
    Dataset d;
    d.family = family;
    for (Index k = 0; k < t.header.size(); ++k) {
        if (k == cx || k == cy || k == cr || (co && k == *co)) continue;
        cov_cols.push_back(k);
        d.covariate_names.push_back(t.header[k]);
    }
    const Index n = t.rows.size();
    const auto nn = static_cast<Eigen::Index>(n);
    d.sites.resize(n);
    d.response.resize(nn);
    d.covariates.resize(nn, static_cast<Eigen::Index>(cov_cols.size()));
    if (co) d.offset = Eigen::VectorXd(nn);
    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        d.sites[i] = {detail::cell(t, i, cx), detail::cell(t, i, cy)};
        d.response[r] = detail::cell(t, i, cr);
        if (co) (*d.offset)[r] = detail::cell(t, i, *co);
        for (Index k = 0; k < cov_cols.size(); ++k)
            d.covariates(r, static_cast<Eigen::Index>(k)) = detail::cell(t, i, cov_cols[k]);
    }
    validate_dataset(d);
    return d;
}

inline Dataset read_dataset_csv(const std::string& path, FamilyTag family) {
    return dataset_from_table(read_csv_file(path), family);
}

struct SiteTable {
    std::vector<Location> sites;
    Eigen::MatrixXd covariates;
    std::optional<Eigen::VectorXd> offset;
};

/// Prediction sites: x, y, an optional offset and the named covariates. Other columns
/// are ignored.
inline SiteTable sites_from_table(const CsvTable& t, const std::vector<std::string>& covariate_names) {
    const Index cx = detail::require_column(t, "x");
    const Index cy = detail::require_column(t, "y");
    const auto co = t.column("offset");
    std::vector<Index> cov_cols;
    for (const auto& name : covariate_names) cov_cols.push_back(detail::require_column(t, name));
    const Index n = t.rows.size();
    const auto nn = static_cast<Eigen::Index>(n);
    SiteTable s;
    s.sites.resize(n);
    s.covariates.resize(nn, static_cast<Eigen::Index>(cov_cols.size()));
    if (co) s.offset = Eigen::VectorXd(nn);
    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        s.sites[i] = {detail::cell(t, i, cx), detail::cell(t, i, cy)};
        if (!std::isfinite(s.sites[i].x) || !std::isfinite(s.sites[i].y))
            throw DataError(DataError::Kind::non_finite_coordinate,
                            "non-finite coordinate at line " + std::to_string(t.line_numbers[i]));
        if (co) (*s.offset)[r] = detail::cell(t, i, *co);
        for (Index k = 0; k < cov_cols.size(); ++k)
            s.covariates(r, static_cast<Eigen::Index>(k)) = detail::cell(t, i, cov_cols[k]);
    }
    if (!s.covariates.allFinite()) throw DataError(DataError::Kind::non_finite_covariate, "non-finite covariate value");
    if (s.offset && !s.offset->allFinite()) throw DataError(DataError::Kind::non_finite_offset, "non-finite offset value");
    return s;
}

inline SiteTable read_sites_csv(const std::string& path, const std::vector<std::string>& covariate_names) {
    return sites_from_table(read_csv_file(path), covariate_names);
}

inline void write_dataset_csv(const std::string& path, const Dataset& d) {
    CsvWriter w(path);
    std::vector<std::string> cols{"x", "y", "response"};
    if (d.offset) cols.push_back("offset");
    for (Index k = 0; k < d.covariate_count(); ++k)
        cols.push_back(k < d.covariate_names.size() ? d.covariate_names[k] : "cov_" + std::to_string(k + 1));
    w.header(cols);
    for (Index i = 0; i < d.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        std::vector<double> v{d.sites[i].x, d.sites[i].y, d.response[r]};
        if (d.offset) v.push_back((*d.offset)[r]);
        for (Eigen::Index k = 0; k < d.covariates.cols(); ++k) v.push_back(d.covariates(r, k));
        w.numbers(v);
    }
}

inline void write_trace_csv(const std::string& path, const std::vector<TraceEntry>& trace) {
    CsvWriter w(path);
    w.header({"scale", "bandwidth", "centers", "train_loss", "valid_loss", "accepted"});
    for (const auto& e : trace)
        w.row({std::to_string(e.scale), format_number(e.bandwidth), std::to_string(e.centers),
               format_number(e.train_loss), format_number(e.valid_loss), e.accepted ? "1" : "0"});
}

// ---------------------------------------------------------------------------
// Model persistence

inline constexpr int model_format_version = 1;

namespace detail {

using json = nlohmann::json;

// NaN and infinities are not JSON numbers; they are written as strings.
inline json number_to_json(double v) {
    if (std::isfinite(v)) return v;
    return format_number(v);
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(number_to_json(v[k]));
    return a;
}

[[noreturn]] inline void schema_fail(const std::string& what) {
    throw DataError(DataError::Kind::bad_argument, "model file: " + what);
}

inline const json& field(const json& j, const char* key) {
    if (!j.is_object()) schema_fail(std::string("expected an object holding '") + key + "'");
    const auto it = j.find(key);
    if (it == j.end()) schema_fail(std::string("missing field '") + key + "'");
    return *it;
}

inline double number_from_json(const json& j, const char* what) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    schema_fail(std::string("field '") + what + "' is not a number");
}

inline double get_number(const json& j, const char* key) { return number_from_json(field(j, key), key); }

template <class Int>
Int get_integer(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_number_integer()) schema_fail(std::string("field '") + key + "' is not an integer");
    return v.get<Int>();
}

inline bool get_bool(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_boolean()) schema_fail(std::string("field '") + key + "' is not a boolean");
    return v.get<bool>();
}

inline const json& get_array(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_array()) schema_fail(std::string("field '") + key + "' is not an array");
    return v;
}

inline Eigen::VectorXd vector_from_json(const json& a, const char* key) {
    if (!a.is_array()) schema_fail(std::string("field '") + key + "' is not an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (Index k = 0; k < a.size(); ++k) v[static_cast<Eigen::Index>(k)] = number_from_json(a[k], key);
    return v;
}

inline IndexList indices_from_json(const json& a, const char* key) {
    if (!a.is_array()) schema_fail(std::string("field '") + key + "' is not an array");
    IndexList out;
    out.reserve(a.size());
    for (const auto& v : a) {
        if (!v.is_number_unsigned()) schema_fail(std::string("field '") + key + "' holds a non-index");
        out.push_back(v.get<Index>());
    }
    return out;
}

}  // namespace detail

inline nlohmann::json model_to_json(const CfModel& m) {
    using detail::json;
    using detail::number_to_json;
    json j;
    j["format_version"] = model_format_version;
    j["family"] = std::string(to_string(m.family.tag()));
    const auto& c = m.config;
    j["config"] = {
        {"train_fraction", c.train_fraction},
        {"bandwidth_decay", c.bandwidth_decay},
        {"patience", c.patience},
        {"center_density", c.center_density},
        {"initial_bandwidth", c.initial_bandwidth ? json(*c.initial_bandwidth) : json(nullptr)},
        {"rng_seed", c.rng_seed},
        {"max_scales", c.max_scales},
        {"min_effective_weight", c.min_effective_weight},
        {"irls_max_iter", c.irls_max_iter},
        {"irls_tol", c.irls_tol},
        {"aggregation_weight_power", c.aggregation_weight_power},
        {"kernel_tolerance", c.kernel_tolerance},
    };
    j["covariate_names"] = m.covariate_names;
    j["beta"] = detail::vector_to_json(m.beta.beta);
    j["glm_beta"] = detail::vector_to_json(m.glm_beta.beta);
    j["bbox_diagonal"] = number_to_json(m.bbox_diagonal);
    j["initial_valid_loss"] = number_to_json(m.initial_valid_loss);
    j["split"] = {{"seed", c.rng_seed}, {"train_idx", m.split.train_idx}, {"valid_idx", m.split.valid_idx}};

    json layers = json::array();
    for (const auto& L : m.layers) {
        json experts = json::array();
        for (const auto& e : L.experts)
            experts.push_back(json::array(
                {number_to_json(e.center.x), number_to_json(e.center.y), number_to_json(e.mu),
                 number_to_json(e.sigma2), e.active}));
        layers.push_back({{"bandwidth", L.bandwidth},
                          {"tau2", number_to_json(L.tau2)},
                          {"weight_power", L.weight_power},
                          {"kernel_tolerance", L.kernel_tolerance},
                          {"experts", std::move(experts)}});
    }
    j["layers"] = std::move(layers);

    json trace = json::array();
    for (const auto& e : m.trace)
        trace.push_back({{"scale", e.scale},
                         {"bandwidth", number_to_json(e.bandwidth)},
                         {"centers", e.centers},
                         {"train_loss", number_to_json(e.train_loss)},
                         {"valid_loss", number_to_json(e.valid_loss)},
                         {"accepted", e.accepted},
                         {"fittable", e.fittable}});
    j["trace"] = std::move(trace);
    return j;
}

/// Inverse of model_to_json; checks the schema and the format version.
inline CfModel model_from_json(const nlohmann::json& j) {
    using namespace detail;
    const int version = get_integer<int>(j, "format_version");
    if (version != model_format_version)
        schema_fail("unsupported format_version " + std::to_string(version));

    CfModel m;
    const auto& fam = field(j, "family");
    if (!fam.is_string()) schema_fail("field 'family' is not a string");
    const auto tag = parse_family(fam.get<std::string>());
    if (!tag) schema_fail("unknown family '" + fam.get<std::string>() + "'");
    m.family = Family(*tag);

    const auto& c = field(j, "config");
    m.config.train_fraction = get_number(c, "train_fraction");
    m.config.bandwidth_decay = get_number(c, "bandwidth_decay");
    m.config.patience = get_integer<int>(c, "patience");
    m.config.center_density = get_number(c, "center_density");
    const auto& ib = field(c, "initial_bandwidth");
    if (!ib.is_null()) m.config.initial_bandwidth = number_from_json(ib, "initial_bandwidth");
    m.config.rng_seed = get_integer<std::uint64_t>(c, "rng_seed");
    m.config.max_scales = get_integer<int>(c, "max_scales");
    m.config.min_effective_weight = get_number(c, "min_effective_weight");
    m.config.irls_max_iter = get_integer<int>(c, "irls_max_iter");
    m.config.irls_tol = get_number(c, "irls_tol");
    m.config.aggregation_weight_power = get_integer<int>(c, "aggregation_weight_power");
    m.config.kernel_tolerance = get_number(c, "kernel_tolerance");
    m.config.validate();

    for (const auto& n : get_array(j, "covariate_names")) {
        if (!n.is_string()) schema_fail("covariate name is not a string");
        m.covariate_names.push_back(n.get<std::string>());
    }
    m.beta.beta = vector_from_json(field(j, "beta"), "beta");
    m.glm_beta.beta = vector_from_json(field(j, "glm_beta"), "glm_beta");
    if (static_cast<Index>(m.beta.beta.size()) != m.covariate_names.size() + 1)
        schema_fail("beta length does not match covariate names");
    m.bbox_diagonal = get_number(j, "bbox_diagonal");
    m.initial_valid_loss = get_number(j, "initial_valid_loss");
    const auto& split = field(j, "split");
    m.split.train_idx = indices_from_json(field(split, "train_idx"), "train_idx");
    m.split.valid_idx = indices_from_json(field(split, "valid_idx"), "valid_idx");

    for (const auto& L : get_array(j, "layers")) {
        ScaleLayer layer;
        layer.bandwidth = get_number(L, "bandwidth");
        if (!(layer.bandwidth > 0.0)) schema_fail("layer bandwidth must be positive");
        layer.tau2 = get_number(L, "tau2");
        layer.weight_power = get_integer<int>(L, "weight_power");
        if (layer.weight_power != 1 && layer.weight_power != 2) schema_fail("layer weight_power must be 1 or 2");
        layer.kernel_tolerance = get_number(L, "kernel_tolerance");
        if (!(layer.kernel_tolerance >= 0.0 && layer.kernel_tolerance < 1.0))
            schema_fail("layer kernel_tolerance must lie in [0,1)");
        for (const auto& e : get_array(L, "experts")) {
            if (!e.is_array() || e.size() != 5 || !e[4].is_boolean())
                schema_fail("expert record must be [x, y, mu, sigma2, active]");
            LocalExpert x;
            x.center = {number_from_json(e[0], "expert x"), number_from_json(e[1], "expert y")};
            x.mu = number_from_json(e[2], "expert mu");
            x.sigma2 = number_from_json(e[3], "expert sigma2");
            x.active = e[4].get<bool>();
            if (x.active && !(x.sigma2 > 0.0)) schema_fail("active expert with nonpositive sigma2");
            layer.experts.push_back(x);
        }
        if (layer.active_count() == 0) schema_fail("layer without active experts");
        m.layers.push_back(std::move(layer));
    }

    for (const auto& e : get_array(j, "trace")) {
        TraceEntry t;
        t.scale = get_integer<int>(e, "scale");
        t.bandwidth = get_number(e, "bandwidth");
        t.centers = get_integer<Index>(e, "centers");
        t.train_loss = get_number(e, "train_loss");
        t.valid_loss = get_number(e, "valid_loss");
        t.accepted = get_bool(e, "accepted");
        t.fittable = get_bool(e, "fittable");
        m.trace.push_back(t);
    }
    return m;
}

inline void save_model(const CfModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << model_to_json(m).dump(1) << '\n';
    if (!out) throw IoError("write failed on '" + path + "'");
}

inline CfModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace cfglmm
