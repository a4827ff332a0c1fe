#include "mcl/io.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mcl {

void save_matrix(const Mat& m, const std::string& path) {
    nlohmann::ordered_json hdr;
    hdr["rows"] = m.rows;
    hdr["cols"] = m.cols;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << hdr.dump() << '\n';
    f.write(reinterpret_cast<const char*>(m.a.data()),
            static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

Mat load_matrix(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("matrix file truncated: " + path);
    const auto hdr = nlohmann::json::parse(line);
    Mat m(hdr.at("rows").get<int>(), hdr.at("cols").get<int>());
    f.read(reinterpret_cast<char*>(m.a.data()),
           static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    if (static_cast<size_t>(f.gcount()) != m.a.size() * sizeof(double))
        throw std::runtime_error("matrix file truncated: " + path);
    return m;
}

} // namespace mcl
