#include "shapecodec/io.hpp"

#include <cstring>

#include "shapecodec/errors.hpp"

namespace shapecodec::io {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'C', 'K', 'P', 'T', '0', '0', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

// Array bytes as stored on disk (row-major little-endian f64). Eigen
// matrices are column-major in memory, so serialize row by row.
std::vector<char> array_bytes(const ad::Mat& m) {
    std::vector<char> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
    std::size_t off = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            std::memcpy(bytes.data() + off, &v, sizeof(double));
            off += sizeof(double);
        }
    return bytes;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string content_hash(const json& config, const std::map<std::string, ad::Mat>& arrays) {
    std::string cfg = config.dump();
    std::uint64_t h = fnv1a(cfg.data(), cfg.size());
    for (const auto& [name, m] : arrays) {
        h = fnv1a(name.data(), name.size(), h);
        std::vector<char> bytes = array_bytes(m);
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_checkpoint(Checkpoint& ckpt, const std::string& path) {
    ckpt.content_hash = content_hash(ckpt.config, ckpt.arrays);

    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, m] : ckpt.arrays) {
        std::uint64_t bytes = static_cast<std::uint64_t>(m.size()) * sizeof(double);
        dir.push_back({{"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"dtype", "f64le"},
                       {"offset", offset},
                       {"bytes", bytes}});
        offset += bytes;
    }

    json header;
    header["schema"] = ckpt.schema;
    header["stage"] = ckpt.stage;
    header["step"] = ckpt.step;
    header["opt_step"] = ckpt.opt_step;
    header["config"] = ckpt.config;
    header["extra"] = ckpt.extra;
    header["rng"] = {{"state", ckpt.rng.state},
                     {"inc", ckpt.rng.inc},
                     {"has_spare", ckpt.rng.has_spare},
                     {"spare", ckpt.rng.spare}};
    header["arrays"] = dir;
    header["content_hash"] = ckpt.content_hash;
    std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, m] : ckpt.arrays) {
        std::vector<char> bytes = array_bytes(m);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw DataError("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    std::uint64_t header_len = read_u64(in);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("truncated checkpoint header: " + path);

    json header;
    try {
        header = json::parse(header_str);
    } catch (const std::exception& e) {
        throw DataError("malformed checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.schema = header.at("schema").get<int>();
    if (ckpt.schema != 1) throw DataError("unsupported checkpoint schema: " + std::to_string(ckpt.schema));
    ckpt.stage = header.at("stage").get<std::string>();
    ckpt.step = header.at("step").get<long long>();
    ckpt.opt_step = header.value("opt_step", 0LL);
    ckpt.config = header.at("config");
    ckpt.extra = header.value("extra", json::object());
    const json& rng = header.at("rng");
    ckpt.rng.state = rng.at("state").get<std::uint64_t>();
    ckpt.rng.inc = rng.at("inc").get<std::uint64_t>();
    ckpt.rng.has_spare = rng.at("has_spare").get<bool>();
    ckpt.rng.spare = rng.at("spare").get<double>();

    for (const auto& entry : header.at("arrays")) {
        std::string name = entry.at("name").get<std::string>();
        Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
        Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
        std::uint64_t bytes = entry.at("bytes").get<std::uint64_t>();
        if (bytes != static_cast<std::uint64_t>(rows) * cols * sizeof(double))
            throw DataError("array byte-size mismatch for " + name);
        std::vector<char> raw(bytes);
        in.read(raw.data(), static_cast<std::streamsize>(bytes));
        if (!in) throw DataError("truncated checkpoint array: " + name);
        ad::Mat m(rows, cols);
        std::size_t off = 0;
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                double v;
                std::memcpy(&v, raw.data() + off, sizeof(double));
                m(i, j) = v;
                off += sizeof(double);
            }
        ckpt.arrays.emplace(std::move(name), std::move(m));
    }

    ckpt.content_hash = header.at("content_hash").get<std::string>();
    std::string recomputed = content_hash(ckpt.config, ckpt.arrays);
    if (recomputed != ckpt.content_hash)
        throw DataError("checkpoint content hash mismatch in " + path + " (stored " +
                        ckpt.content_hash + ", recomputed " + recomputed + ")");
    return ckpt;
}

namespace {

void write_raw_f32(const std::string& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write raw array: " + path);
    for (float v : values) {
        char buf[4];
        std::memcpy(buf, &v, 4);  // little-endian on every supported target
        out.write(buf, 4);
    }
}

}  // namespace

void export_triplane(const fields::Triplane& t, const std::string& base_path) {
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(3) * t.resolution * t.resolution * t.channels);
    for (int p = 0; p < 3; ++p)
        for (Eigen::Index i = 0; i < t.planes[p].rows(); ++i)
            for (Eigen::Index j = 0; j < t.planes[p].cols(); ++j)
                values.push_back(static_cast<float>(t.planes[p](i, j)));
    write_raw_f32(base_path + ".raw", values);

    json sidecar;
    sidecar["dtype"] = "f32le";
    sidecar["shape"] = {3, t.resolution, t.resolution, t.channels};
    sidecar["plane_order"] = {"xy", "yz", "xz"};
    sidecar["layout"] = "plane-major, pixel rows u*R+v, channel minor";
    std::ofstream out(base_path + ".json");
    out << sidecar.dump(2) << '\n';
}

void export_grid(const fields::OccupancyGrid& g, const std::string& base_path) {
    std::vector<float> values(g.values.begin(), g.values.end());
    write_raw_f32(base_path + ".raw", values);

    json sidecar;
    sidecar["dtype"] = "f32le";
    sidecar["shape"] = {g.r, g.r, g.r};
    sidecar["index_order"] = "x-major: ((ix*r)+iy)*r+iz";
    sidecar["unevaluated_value"] = 0.0;
    std::size_t evaluated = 0;
    for (auto m : g.mask) evaluated += m;
    sidecar["evaluated_cells"] = evaluated;
    std::ofstream out(base_path + ".json");
    out << sidecar.dump(2) << '\n';
}

JsonlLogger::JsonlLogger(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw DataError("cannot open log file: " + path);
}

void JsonlLogger::log(const json& record) {
    if (!out_.is_open()) return;
    out_ << record.dump() << '\n';
    out_.flush();
}

}  // namespace shapecodec::io
