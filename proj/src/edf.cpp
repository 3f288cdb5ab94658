#include "sleepscore/edf.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace sleepscore {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(' ');
    if (a == std::string::npos) {
        return "";
    }
    std::size_t b = s.find_last_not_of(' ');
    return s.substr(a, b - a + 1);
}

std::string read_field(const std::vector<std::uint8_t>& bytes, std::size_t& pos,
                       std::size_t width) {
    if (pos + width > bytes.size()) {
        throw std::runtime_error("edf: truncated header at byte " + std::to_string(pos));
    }
    std::string s(reinterpret_cast<const char*>(bytes.data()) + pos, width);
    pos += width;
    return trim(s);
}

std::int64_t parse_int(const std::string& s, std::size_t offset) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("edf: non-numeric integer field at byte " +
                                 std::to_string(offset) + ": '" + s + "'");
    }
}

double parse_real(const std::string& s, std::size_t offset) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("edf: non-numeric real field at byte " +
                                 std::to_string(offset) + ": '" + s + "'");
    }
}

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void put_field(std::vector<std::uint8_t>& out, const std::string& s, std::size_t width,
               const char* what) {
    if (s.size() > width) {
        throw std::invalid_argument("edf: " + std::string(what) + " '" + s +
                                    "' exceeds field width " + std::to_string(width));
    }
    for (std::size_t i = 0; i < width; ++i) {
        out.push_back(i < s.size() ? static_cast<std::uint8_t>(s[i]) : ' ');
    }
}

}  // namespace

EdfFile parse_edf(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 256) {
        throw std::runtime_error("edf: file too short for a header (" +
                                 std::to_string(bytes.size()) + " bytes)");
    }
    EdfFile file;
    EdfHeader& h = file.header;
    std::size_t pos = 0;
    h.version = read_field(bytes, pos, 8);
    h.patient = read_field(bytes, pos, 80);
    h.recording = read_field(bytes, pos, 80);
    h.start_date = read_field(bytes, pos, 8);
    h.start_time = read_field(bytes, pos, 8);
    const std::size_t header_bytes_off = pos;
    const std::int64_t header_bytes = parse_int(read_field(bytes, pos, 8), header_bytes_off);
    h.reserved = read_field(bytes, pos, 44);
    const std::size_t n_records_off = pos;
    h.n_records = parse_int(read_field(bytes, pos, 8), n_records_off);
    const std::size_t dur_off = pos;
    h.record_duration_s = parse_real(read_field(bytes, pos, 8), dur_off);
    const std::size_t ns_off = pos;
    const std::int64_t ns = parse_int(read_field(bytes, pos, 4), ns_off);
    if (ns < 1) {
        throw std::runtime_error("edf: signal count must be positive, got " +
                                 std::to_string(ns));
    }
    if (header_bytes != 256 * (ns + 1)) {
        throw std::runtime_error("edf: header size field says " + std::to_string(header_bytes) +
                                 " but " + std::to_string(ns) + " signals require " +
                                 std::to_string(256 * (ns + 1)));
    }
    if (bytes.size() < static_cast<std::size_t>(header_bytes)) {
        throw std::runtime_error("edf: truncated header at byte " + std::to_string(bytes.size()));
    }

    h.signals.resize(static_cast<std::size_t>(ns));
    for (auto& s : h.signals) {
        s.label = read_field(bytes, pos, 16);
    }
    for (auto& s : h.signals) {
        s.transducer = read_field(bytes, pos, 80);
    }
    for (auto& s : h.signals) {
        s.physical_dim = read_field(bytes, pos, 8);
    }
    for (auto& s : h.signals) {
        const std::size_t off = pos;
        s.physical_min = parse_real(read_field(bytes, pos, 8), off);
    }
    for (auto& s : h.signals) {
        const std::size_t off = pos;
        s.physical_max = parse_real(read_field(bytes, pos, 8), off);
    }
    for (auto& s : h.signals) {
        const std::size_t off = pos;
        s.digital_min = parse_int(read_field(bytes, pos, 8), off);
    }
    for (auto& s : h.signals) {
        const std::size_t off = pos;
        s.digital_max = parse_int(read_field(bytes, pos, 8), off);
    }
    for (auto& s : h.signals) {
        s.prefiltering = read_field(bytes, pos, 80);
    }
    for (auto& s : h.signals) {
        const std::size_t off = pos;
        s.samples_per_record = parse_int(read_field(bytes, pos, 8), off);
        if (s.samples_per_record < 1) {
            throw std::runtime_error("edf: samples_per_record must be positive at byte " +
                                     std::to_string(off));
        }
    }
    for (std::int64_t i = 0; i < ns; ++i) {
        read_field(bytes, pos, 32);  // per-signal reserved
    }

    std::int64_t record_samples = 0;
    for (const auto& s : h.signals) {
        record_samples += s.samples_per_record;
    }
    const std::size_t expected =
        static_cast<std::size_t>(header_bytes) +
        static_cast<std::size_t>(h.n_records * record_samples * 2);
    if (bytes.size() != expected) {
        throw std::runtime_error("edf: expected " + std::to_string(expected) +
                                 " bytes for " + std::to_string(h.n_records) +
                                 " records, file has " + std::to_string(bytes.size()));
    }

    file.samples.resize(h.signals.size());
    for (std::size_t i = 0; i < h.signals.size(); ++i) {
        file.samples[i].reserve(
            static_cast<std::size_t>(h.n_records * h.signals[i].samples_per_record));
    }
    for (std::int64_t r = 0; r < h.n_records; ++r) {
        for (std::size_t i = 0; i < h.signals.size(); ++i) {
            for (std::int64_t k = 0; k < h.signals[i].samples_per_record; ++k) {
                const std::uint16_t lo = bytes[pos];
                const std::uint16_t hi = bytes[pos + 1];
                pos += 2;
                file.samples[i].push_back(
                    static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8))));
            }
        }
    }
    return file;
}

std::vector<std::uint8_t> write_edf(const EdfFile& file) {
    const EdfHeader& h = file.header;
    const std::int64_t ns = static_cast<std::int64_t>(h.signals.size());
    if (ns < 1) {
        throw std::invalid_argument("edf: cannot write a file without signals");
    }
    if (file.samples.size() != h.signals.size()) {
        throw std::invalid_argument("edf: " + std::to_string(file.samples.size()) +
                                    " sample arrays for " + std::to_string(ns) + " signals");
    }
    for (std::size_t i = 0; i < h.signals.size(); ++i) {
        const std::int64_t want = h.n_records * h.signals[i].samples_per_record;
        if (static_cast<std::int64_t>(file.samples[i].size()) != want) {
            throw std::invalid_argument(
                "edf: signal " + std::to_string(i) + " has " +
                std::to_string(file.samples[i].size()) + " samples, header implies " +
                std::to_string(want));
        }
    }

    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(256 * (ns + 1)));
    put_field(out, h.version, 8, "version");
    put_field(out, h.patient, 80, "patient id");
    put_field(out, h.recording, 80, "recording id");
    put_field(out, h.start_date, 8, "start date");
    put_field(out, h.start_time, 8, "start time");
    put_field(out, std::to_string(256 * (ns + 1)), 8, "header size");
    put_field(out, h.reserved, 44, "reserved");
    put_field(out, std::to_string(h.n_records), 8, "record count");
    put_field(out, format_real(h.record_duration_s), 8, "record duration");
    put_field(out, std::to_string(ns), 4, "signal count");
    for (const auto& s : h.signals) {
        put_field(out, s.label, 16, "signal label");
    }
    for (const auto& s : h.signals) {
        put_field(out, s.transducer, 80, "transducer");
    }
    for (const auto& s : h.signals) {
        put_field(out, s.physical_dim, 8, "physical dimension");
    }
    for (const auto& s : h.signals) {
        put_field(out, format_real(s.physical_min), 8, "physical min");
    }
    for (const auto& s : h.signals) {
        put_field(out, format_real(s.physical_max), 8, "physical max");
    }
    for (const auto& s : h.signals) {
        put_field(out, std::to_string(s.digital_min), 8, "digital min");
    }
    for (const auto& s : h.signals) {
        put_field(out, std::to_string(s.digital_max), 8, "digital max");
    }
    for (const auto& s : h.signals) {
        put_field(out, s.prefiltering, 80, "prefiltering");
    }
    for (const auto& s : h.signals) {
        put_field(out, std::to_string(s.samples_per_record), 8, "samples per record");
    }
    for (std::int64_t i = 0; i < ns; ++i) {
        put_field(out, "", 32, "signal reserved");
    }

    for (std::int64_t r = 0; r < h.n_records; ++r) {
        for (std::size_t i = 0; i < h.signals.size(); ++i) {
            const std::int64_t spr = h.signals[i].samples_per_record;
            for (std::int64_t k = 0; k < spr; ++k) {
                const auto v = static_cast<std::uint16_t>(
                    file.samples[i][static_cast<std::size_t>(r * spr + k)]);
                out.push_back(static_cast<std::uint8_t>(v & 0xFF));
                out.push_back(static_cast<std::uint8_t>(v >> 8));
            }
        }
    }
    return out;
}

EdfFile read_edf_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("edf: cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    try {
        return parse_edf(bytes);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_edf_file(const std::string& path, const EdfFile& file) {
    const auto bytes = write_edf(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("edf: cannot write " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> digital_to_physical(const std::vector<std::int16_t>& digital,
                                        const EdfSignalHeader& spec) {
    if (spec.digital_max == spec.digital_min) {
        throw std::invalid_argument("edf: signal '" + spec.label + "' has zero digital range");
    }
    const double scale = (spec.physical_max - spec.physical_min) /
                         static_cast<double>(spec.digital_max - spec.digital_min);
    std::vector<double> out(digital.size());
    for (std::size_t i = 0; i < digital.size(); ++i) {
        out[i] = (static_cast<double>(digital[i]) - static_cast<double>(spec.digital_min)) *
                     scale +
                 spec.physical_min;
    }
    return out;
}

namespace {

double parse_tal_number(const std::string& text, std::size_t record,
                        const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument(text);
        }
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("edf+: record " + std::to_string(record) +
                                 ": non-numeric " + std::string(what) + " '" + text + "'");
    }
}

void parse_tal_block(const std::string& tal, std::size_t record,
                     std::vector<Annotation>& out) {
    const std::size_t first_sep = tal.find('\x14');
    if (first_sep == std::string::npos) {
        throw std::runtime_error("edf+: record " + std::to_string(record) +
                                 ": TAL missing the \\x14 terminator");
    }
    std::string stamp = tal.substr(0, first_sep);
    double onset = 0.0, duration = 0.0;
    const std::size_t dur_sep = stamp.find('\x15');
    if (dur_sep != std::string::npos) {
        onset = parse_tal_number(stamp.substr(0, dur_sep), record, "onset");
        duration = parse_tal_number(stamp.substr(dur_sep + 1), record, "duration");
    } else {
        onset = parse_tal_number(stamp, record, "onset");
    }
    std::size_t pos = first_sep + 1;
    while (pos < tal.size()) {
        const std::size_t end = tal.find('\x14', pos);
        if (end == std::string::npos) {
            throw std::runtime_error("edf+: record " + std::to_string(record) +
                                     ": unterminated annotation text");
        }
        const std::string label = tal.substr(pos, end - pos);
        if (!label.empty()) {
            out.push_back(Annotation{onset, duration, label});
        }
        pos = end + 1;
    }
}

}  // namespace

std::vector<Annotation> parse_edfplus_annotations(const EdfFile& file,
                                                  std::size_t signal_index) {
    if (signal_index >= file.header.signals.size()) {
        throw std::invalid_argument("edf+: signal index " + std::to_string(signal_index) +
                                    " out of range");
    }
    const std::int64_t spr = file.header.signals[signal_index].samples_per_record;
    const auto& data = file.samples[signal_index];
    std::vector<Annotation> out;
    for (std::int64_t r = 0; r < file.header.n_records; ++r) {
        std::string bytes;
        bytes.reserve(static_cast<std::size_t>(spr * 2));
        for (std::int64_t k = 0; k < spr; ++k) {
            const auto v =
                static_cast<std::uint16_t>(data[static_cast<std::size_t>(r * spr + k)]);
            bytes.push_back(static_cast<char>(v & 0xFF));
            bytes.push_back(static_cast<char>(v >> 8));
        }
        std::size_t pos = 0;
        while (pos < bytes.size() && bytes[pos] != '\0') {
            const std::size_t end = bytes.find('\0', pos);
            if (end == std::string::npos) {
                throw std::runtime_error("edf+: record " + std::to_string(r) +
                                         ": TAL missing the \\x00 terminator");
            }
            parse_tal_block(bytes.substr(pos, end - pos), static_cast<std::size_t>(r), out);
            pos = end + 1;
        }
    }
    return out;
}

std::string encode_tal(double onset_s, double duration_s,
                       const std::vector<std::string>& labels) {
    std::string out;
    if (onset_s >= 0.0) {
        out += '+';
    }
    out += format_real(onset_s);
    if (duration_s > 0.0) {
        out += '\x15';
        out += format_real(duration_s);
    }
    out += '\x14';
    for (const auto& label : labels) {
        out += label;
        out += '\x14';
    }
    out += '\0';
    return out;
}

std::vector<std::int16_t> pack_tal_record(const std::string& text,
                                          std::int64_t samples_per_record) {
    if (static_cast<std::int64_t>(text.size()) > samples_per_record * 2) {
        throw std::invalid_argument("edf+: TAL text of " + std::to_string(text.size()) +
                                    " bytes does not fit a record of " +
                                    std::to_string(samples_per_record * 2));
    }
    std::string padded = text;
    padded.resize(static_cast<std::size_t>(samples_per_record * 2), '\0');
    std::vector<std::int16_t> out(static_cast<std::size_t>(samples_per_record));
    for (std::int64_t k = 0; k < samples_per_record; ++k) {
        const auto lo = static_cast<std::uint8_t>(padded[static_cast<std::size_t>(2 * k)]);
        const auto hi = static_cast<std::uint8_t>(padded[static_cast<std::size_t>(2 * k + 1)]);
        out[static_cast<std::size_t>(k)] =
            static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
    return out;
}

}  // namespace sleepscore
