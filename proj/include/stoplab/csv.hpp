#pragma once

#include <charconv>
#include <cstdint>
#include <string>

namespace stoplab {

/// Locale-independent CSV row builder. Doubles use shortest round-trip form so
/// repeated runs produce byte-identical files. Text fields containing commas,
/// quotes or newlines are quoted.
class CsvRow {
public:
    CsvRow& add(const std::string& s) {
        sep();
        if (s.find_first_of(",\"\n") == std::string::npos) {
            buf_ += s;
        } else {
            buf_ += '"';
            for (const char c : s) {
                if (c == '"') buf_ += '"';
                buf_ += c;
            }
            buf_ += '"';
        }
        return *this;
    }
    CsvRow& add(const char* s) { return add(std::string(s)); }
    CsvRow& add(double v) {
        char tmp[32];
        auto [p, ec] = std::to_chars(tmp, tmp + sizeof(tmp), v);
        (void)ec;
        sep();
        buf_.append(tmp, p);
        return *this;
    }
    CsvRow& add(long v) { return add_int(v); }
    CsvRow& add(int v) { return add_int(static_cast<long>(v)); }
    CsvRow& add(uint64_t v) {
        char tmp[24];
        auto [p, ec] = std::to_chars(tmp, tmp + sizeof(tmp), v);
        (void)ec;
        sep();
        buf_.append(tmp, p);
        return *this;
    }
    const std::string& str() const { return buf_; }

private:
    CsvRow& add_int(long v) {
        char tmp[24];
        auto [p, ec] = std::to_chars(tmp, tmp + sizeof(tmp), v);
        (void)ec;
        sep();
        buf_.append(tmp, p);
        return *this;
    }
    void sep() {
        if (started_) buf_ += ',';
        started_ = true;
    }
    std::string buf_;
    bool started_ = false;
};

} // namespace stoplab
