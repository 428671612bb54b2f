#pragma once

#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace peakdyn {
namespace io {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key/value view of an INI-style config: "[section]" headers turn into
// "section.key" keys; '#' starts a comment; values keep internal spaces.
class Config {
  public:
    static Config from_file(const std::string &path);
    static Config from_string(const std::string &text);

    bool has(const std::string &key) const { return values_.count(key) > 0; }
    std::string get(const std::string &key, const std::string &fallback) const;
    double get(const std::string &key, double fallback) const;
    int get(const std::string &key, int fallback) const;
    long long get(const std::string &key, long long fallback) const;
    bool get(const std::string &key, bool fallback) const;
    std::vector<double> get_list(const std::string &key,
                                 const std::vector<double> &fallback) const;

    void set(const std::string &key, const std::string &value) { values_[key] = value; }
    const std::map<std::string, std::string> &entries() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

// Line-buffered CSV writer with full-precision doubles (%.17g).
class CsvWriter {
  public:
    explicit CsvWriter(const std::string &path);
    ~CsvWriter();
    CsvWriter(const CsvWriter &) = delete;
    CsvWriter &operator=(const CsvWriter &) = delete;

    void header(const std::vector<std::string> &cols);
    void field(double v);
    void field(int v);
    void field(long long v);
    void field(const std::string &v);
    void end_row();

    template <class... Ts>
    void row(Ts... vs) {
        (field(vs), ...);
        end_row();
    }

  private:
    void sep();
    FILE *f_ = nullptr;
    bool first_in_row_ = true;
};

void ensure_dir(const std::string &path);
void write_text_file(const std::string &path, const std::string &content);

} // namespace io
} // namespace peakdyn
