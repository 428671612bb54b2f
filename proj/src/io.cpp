#include "peakdyn/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace peakdyn {
namespace io {

namespace {

std::string trim(const std::string &s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::from_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

Config Config::from_string(const std::string &text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw config_error("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[section.empty() ? key : section + "." + key] = val;
    }
    return cfg;
}

std::string Config::get(const std::string &key, const std::string &fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get(const std::string &key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw config_error("config value for '" + key + "' is not a number: " + it->second);
    }
}

int Config::get(const std::string &key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw config_error("config value for '" + key + "' is not an integer: " + it->second);
    }
}

long long Config::get(const std::string &key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoll(it->second);
    } catch (...) {
        throw config_error("config value for '" + key + "' is not an integer: " + it->second);
    }
}

bool Config::get(const std::string &key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    for (auto &c : v) c = char(std::tolower(c));
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw config_error("config value for '" + key + "' is not a boolean: " + it->second);
}

std::vector<double> Config::get_list(const std::string &key,
                                     const std::vector<double> &fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::istringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (...) {
            throw config_error("config list '" + key + "' has a bad entry: " + tok);
        }
    }
    if (out.empty()) throw config_error("config list '" + key + "' is empty");
    return out;
}

CsvWriter::CsvWriter(const std::string &path) {
    f_ = std::fopen(path.c_str(), "w");
    if (!f_) throw std::runtime_error("cannot open for writing: " + path);
}

CsvWriter::~CsvWriter() {
    if (f_) std::fclose(f_);
}

void CsvWriter::header(const std::vector<std::string> &cols) {
    for (size_t i = 0; i < cols.size(); ++i)
        std::fprintf(f_, "%s%s", i ? "," : "", cols[i].c_str());
    std::fprintf(f_, "\n");
}

void CsvWriter::sep() {
    if (!first_in_row_) std::fputc(',', f_);
    first_in_row_ = false;
}

void CsvWriter::field(double v) {
    sep();
    std::fprintf(f_, "%.17g", v);
}

void CsvWriter::field(int v) {
    sep();
    std::fprintf(f_, "%d", v);
}

void CsvWriter::field(long long v) {
    sep();
    std::fprintf(f_, "%lld", v);
}

void CsvWriter::field(const std::string &v) {
    sep();
    std::fputs(v.c_str(), f_);
}

void CsvWriter::end_row() {
    std::fputc('\n', f_);
    first_in_row_ = true;
}

void ensure_dir(const std::string &path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw std::runtime_error("cannot create directory: " + path);
}

void write_text_file(const std::string &path, const std::string &content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
}

} // namespace io
} // namespace peakdyn
