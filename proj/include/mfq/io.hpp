#pragma once

// File formats: JSON problem/dataset documents, git-style content hashes and
// 17-significant-digit CSV tables.

#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "mfq/error.hpp"
#include "mfq/kernel.hpp"
#include "mfq/limit_ode.hpp"
#include "mfq/mdp.hpp"
#include "mfq/qnet.hpp"
#include "mfq/trainer.hpp"

namespace mfq {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << content;
    if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

inline std::string to_hex(const unsigned char* data, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(digits[data[i] >> 4]);
        s.push_back(digits[data[i] & 0xf]);
    }
    return s;
}

inline std::string sha1_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1) {
        fail(ErrorCode::Io, "SHA-1 digest failed");
    }
    return to_hex(md, len);
}

/// Same digest `git hash-object` reports for a blob with these bytes.
inline std::string git_blob_hash(std::string_view content) {
    std::string framed = "blob " + std::to_string(content.size());
    framed.push_back('\0');
    framed.append(content);
    return sha1_hex(framed);
}

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        fail(ErrorCode::Io, "bad number '" + std::string(s) + "'");
    }
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<Vector> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        fail(ErrorCode::Io, "missing CSV column '" + std::string(name) + "'");
    }
};

inline std::string to_csv(const CsvTable& t) {
    std::string out;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (i) out.push_back(',');
        out += t.header[i];
    }
    out.push_back('\n');
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out.push_back(',');
            out += format_double(row[i]);
        }
        out.push_back('\n');
    }
    return out;
}

inline CsvTable parse_csv(std::string_view text) {
    CsvTable t;
    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) return false;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        return true;
    };
    auto split = [](std::string_view line) {
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return cells;
    };
    std::string_view line;
    if (!next_line(line)) fail(ErrorCode::Io, "empty CSV");
    for (auto c : split(line)) t.header.emplace_back(c);
    while (next_line(line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size()) fail(ErrorCode::Io, "ragged CSV row");
        Vector row;
        row.reserve(cells.size());
        for (auto c : cells) row.push_back(parse_double(c));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path)); }
inline void write_csv(const fs::path& path, const CsvTable& t) { write_file(path, to_csv(t)); }

inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }
inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::Io, path.string() + ": " + e.what());
    }
}

/// Rejects keys outside `allowed`.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!j.is_object()) fail(ErrorCode::InvalidInput, std::string(where) + " must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) fail(ErrorCode::InvalidInput, "unknown field '" + key + "' in " + std::string(where));
    }
}

template <typename T>
T get_as(const json& j, std::string_view what) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidInput, std::string(what) + ": " + e.what());
    }
}

// ---- problem documents ---------------------------------------------------

inline MdpSpec parse_mdp_spec(const json& j) {
    check_keys(j, {"states", "actions", "transition", "rewards", "terminal", "gamma", "horizon", "initial_dist"},
               "MDP spec");
    for (auto key : {"states", "actions", "transition", "rewards", "gamma"}) {
        if (!j.contains(key)) fail(ErrorCode::InvalidInput, std::string("MDP spec is missing '") + key + "'");
    }
    MdpSpec s;
    s.states = get_as<std::vector<Vector>>(j.at("states"), "states");
    s.actions = get_as<std::vector<Vector>>(j.at("actions"), "actions");
    s.transition = get_as<std::vector<std::vector<Vector>>>(j.at("transition"), "transition");
    s.gamma = get_as<double>(j.at("gamma"), "gamma");
    if (j.contains("horizon") && !j.at("horizon").is_null()) {
        s.horizon = get_as<std::size_t>(j.at("horizon"), "horizon");
        s.reward_by_time = get_as<std::vector<std::vector<Vector>>>(j.at("rewards"), "rewards");
        if (!j.contains("terminal")) fail(ErrorCode::InvalidInput, "finite-horizon spec needs 'terminal'");
        s.terminal = get_as<Vector>(j.at("terminal"), "terminal");
        if (!j.contains("initial_dist") || j.at("initial_dist").is_null()) {
            fail(ErrorCode::InvalidInput, "finite-horizon spec needs 'initial_dist'");
        }
        s.initial_dist = get_as<Vector>(j.at("initial_dist"), "initial_dist");
    } else {
        s.reward = get_as<std::vector<Vector>>(j.at("rewards"), "rewards");
        if (j.contains("terminal") && !j.at("terminal").is_null()) {
            fail(ErrorCode::InvalidInput, "'terminal' requires a horizon");
        }
        if (j.contains("initial_dist") && !j.at("initial_dist").is_null()) {
            s.initial_dist = get_as<Vector>(j.at("initial_dist"), "initial_dist");
        }
    }
    return s;
}

inline json to_json(const MdpSpec& s) {
    json j;
    j["states"] = s.states;
    j["actions"] = s.actions;
    j["transition"] = s.transition;
    j["gamma"] = s.gamma;
    if (s.horizon) {
        j["horizon"] = *s.horizon;
        j["rewards"] = s.reward_by_time;
        j["terminal"] = s.terminal;
        j["initial_dist"] = s.initial_dist;
    } else {
        j["horizon"] = nullptr;
        j["rewards"] = s.reward;
        if (!s.initial_dist.empty()) j["initial_dist"] = s.initial_dist;
    }
    return j;
}

struct LoadedMdp {
    MdpSpec spec;
    std::string hash; // git blob hash of the file bytes
};

inline LoadedMdp load_mdp_spec(const fs::path& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::InvalidInput, path.string() + ": " + e.what());
    }
    return {parse_mdp_spec(j), git_blob_hash(text)};
}

inline RegressionDataset parse_dataset(const json& j) {
    check_keys(j, {"xs", "ys"}, "dataset");
    if (!j.contains("xs") || !j.contains("ys")) fail(ErrorCode::InvalidInput, "dataset needs 'xs' and 'ys'");
    RegressionDataset d;
    d.xs = get_as<std::vector<Vector>>(j.at("xs"), "xs");
    d.ys = get_as<Vector>(j.at("ys"), "ys");
    return d;
}

struct LoadedDataset {
    RegressionDataset data;
    std::string hash;
};

inline LoadedDataset load_dataset(const fs::path& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::InvalidInput, path.string() + ": " + e.what());
    }
    return {parse_dataset(j), git_blob_hash(text)};
}

// ---- tables --------------------------------------------------------------

/// Column names for a flattened value table: x{x}_a{a}, or j{j}_x{x}_a{a}
/// when there are several slices.
inline std::vector<std::string> table_columns(std::size_t n_states, std::size_t n_actions, std::size_t n_slices) {
    std::vector<std::string> cols;
    for (std::size_t j = 0; j < n_slices; ++j) {
        for (std::size_t x = 0; x < n_states; ++x) {
            for (std::size_t a = 0; a < n_actions; ++a) {
                std::string name = "x" + std::to_string(x) + "_a" + std::to_string(a);
                cols.push_back(n_slices > 1 ? "j" + std::to_string(j) + "_" + name : name);
            }
        }
    }
    return cols;
}

inline std::vector<std::string> sample_columns(std::size_t m) {
    std::vector<std::string> cols;
    for (std::size_t i = 0; i < m; ++i) cols.push_back("i" + std::to_string(i));
    return cols;
}

/// Long-form value table: [j,] x, a, value.
inline CsvTable value_table_csv(const ValueTable& v) {
    CsvTable t;
    const bool sliced = v.n_slices > 1;
    if (sliced) t.header.push_back("j");
    t.header.insert(t.header.end(), {"x", "a", "value"});
    for (std::size_t j = 0; j < v.n_slices; ++j) {
        for (std::size_t x = 0; x < v.n_states; ++x) {
            for (std::size_t a = 0; a < v.n_actions; ++a) {
                Vector row;
                if (sliced) row.push_back(static_cast<double>(j));
                row.insert(row.end(), {static_cast<double>(x), static_cast<double>(a), v.at(j, x, a)});
                t.rows.push_back(std::move(row));
            }
        }
    }
    return t;
}

inline json value_table_json(const ValueTable& v) {
    json j;
    j["n_states"] = v.n_states;
    j["n_actions"] = v.n_actions;
    j["n_slices"] = v.n_slices;
    j["values"] = v.values;
    return j;
}

/// Trajectory CSV: t, one column per table entry, then moment columns m_*.
inline CsvTable train_record_csv(const TrainRecord& rec, const std::vector<std::string>& columns) {
    CsvTable t;
    t.header.push_back("t");
    t.header.insert(t.header.end(), columns.begin(), columns.end());
    for (auto name : MeasureMoments::names) t.header.push_back("m_" + std::string(name));
    for (std::size_t s = 0; s < rec.times.size(); ++s) {
        require_dims(rec.snapshots[s].size(), columns.size(), "snapshot width");
        Vector row;
        row.reserve(t.header.size());
        row.push_back(rec.times[s]);
        row.insert(row.end(), rec.snapshots[s].begin(), rec.snapshots[s].end());
        for (double m : rec.moments[s].as_array()) row.push_back(m);
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Inverse of train_record_csv; final parameters are not part of the CSV.
inline TrainRecord parse_train_record(const CsvTable& t) {
    if (t.header.empty() || t.header[0] != "t") fail(ErrorCode::Io, "trajectory CSV must start with column t");
    const std::size_t n_moments = MeasureMoments::names.size();
    if (t.header.size() < 1 + n_moments) fail(ErrorCode::Io, "trajectory CSV is too narrow");
    const std::size_t width = t.header.size() - 1 - n_moments;
    for (std::size_t k = 0; k < n_moments; ++k) {
        if (t.header[1 + width + k] != "m_" + std::string(MeasureMoments::names[k])) {
            fail(ErrorCode::Io, "trajectory CSV moment columns are malformed");
        }
    }
    TrainRecord rec;
    for (const auto& row : t.rows) {
        rec.times.push_back(row[0]);
        rec.snapshots.emplace_back(row.begin() + 1, row.begin() + 1 + static_cast<std::ptrdiff_t>(width));
        std::array<double, 6> m{};
        for (std::size_t k = 0; k < n_moments; ++k) m[k] = row[1 + width + k];
        rec.moments.push_back(MeasureMoments::from_array(m));
    }
    return rec;
}

inline json to_json(const NetworkParams& p) {
    json j;
    j["n_units"] = p.n_units;
    j["dim"] = p.dim;
    j["slices"] = p.slices;
    j["activation"] = std::string(to_string(p.act));
    j["c"] = p.c;
    j["w"] = p.w;
    return j;
}

inline NetworkParams params_from_json(const json& j) {
    check_keys(j, {"n_units", "dim", "slices", "activation", "c", "w"}, "network params");
    NetworkParams p;
    p.n_units = get_as<std::size_t>(j.at("n_units"), "n_units");
    p.dim = get_as<std::size_t>(j.at("dim"), "dim");
    p.slices = get_as<std::size_t>(j.at("slices"), "slices");
    p.act = parse_activation(get_as<std::string>(j.at("activation"), "activation"));
    p.c = get_as<Vector>(j.at("c"), "c");
    p.w = get_as<Vector>(j.at("w"), "w");
    require_dims(p.c.size(), p.n_units * p.slices, "c length");
    require_dims(p.w.size(), p.n_units * p.dim, "w length");
    return p;
}

inline CsvTable matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& columns) {
    require_dims(columns.size(), static_cast<std::size_t>(m.cols()), "matrix column names");
    CsvTable t;
    t.header = columns;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Vector row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline Eigen::MatrixXd matrix_from_csv(const CsvTable& t) {
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    const auto m = static_cast<Eigen::Index>(t.header.size());
    Eigen::MatrixXd out(n, m);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < m; ++c) out(r, c) = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    return out;
}

inline CsvTable ode_solution_csv(const OdeSolution& sol, const std::vector<std::string>& columns) {
    CsvTable t;
    t.header.push_back("t");
    t.header.insert(t.header.end(), columns.begin(), columns.end());
    for (std::size_t s = 0; s < sol.times.size(); ++s) {
        require_dims(sol.values[s].size(), columns.size(), "ODE state width");
        Vector row{sol.times[s]};
        row.insert(row.end(), sol.values[s].begin(), sol.values[s].end());
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline OdeSolution parse_ode_solution(const CsvTable& t) {
    if (t.header.empty() || t.header[0] != "t") fail(ErrorCode::Io, "ODE CSV must start with column t");
    OdeSolution sol;
    for (const auto& row : t.rows) {
        sol.times.push_back(row[0]);
        sol.values.emplace_back(row.begin() + 1, row.end());
    }
    return sol;
}

inline json kernel_meta(const KernelTensor& A) {
    json j;
    j["alpha"] = A.alpha;
    j["method"] = std::string(to_string(A.method));
    j["samples"] = A.samples;
    j["seed"] = A.seed;
    j["per_sample_normalized"] = A.per_sample_normalized;
    j["eig_min"] = A.eig_min ? json(*A.eig_min) : json(nullptr);
    j["eig_max"] = A.eig_max ? json(*A.eig_max) : json(nullptr);
    j["size"] = A.size();
    return j;
}

} // namespace mfq
