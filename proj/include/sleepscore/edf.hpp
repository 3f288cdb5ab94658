#pragma once

// EDF/EDF+ reading and writing. Headers are fixed-width ASCII; samples are
// 16-bit little-endian two's complement. The writer emits canonical field
// formatting, so write -> parse -> write reproduces the bytes exactly.

#include <cstdint>
#include <string>
#include <vector>

namespace sleepscore {

struct EdfSignalHeader {
    std::string label;
    std::string transducer;
    std::string physical_dim;
    double physical_min = 0.0;
    double physical_max = 0.0;
    std::int64_t digital_min = 0;
    std::int64_t digital_max = 0;
    std::string prefiltering;
    std::int64_t samples_per_record = 0;
};

struct EdfHeader {
    std::string version = "0";
    std::string patient;
    std::string recording;
    std::string start_date = "01.01.00";
    std::string start_time = "00.00.00";
    std::string reserved;  // "EDF+C" marks an EDF+ file
    std::int64_t n_records = 0;
    double record_duration_s = 0.0;
    std::vector<EdfSignalHeader> signals;
};

struct EdfFile {
    EdfHeader header;
    // per signal: all records concatenated, samples_per_record each
    std::vector<std::vector<std::int16_t>> samples;
};

EdfFile parse_edf(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> write_edf(const EdfFile& file);

EdfFile read_edf_file(const std::string& path);
void write_edf_file(const std::string& path, const EdfFile& file);

/// Linear calibration from digital to physical units.
std::vector<double> digital_to_physical(const std::vector<std::int16_t>& digital,
                                        const EdfSignalHeader& spec);

struct Annotation {
    double onset_s = 0.0;
    double duration_s = 0.0;
    std::string label;
};

/// Decodes the TAL streams of an annotation signal (onset \x15 duration \x14
/// label \x14 ... \x00). Timekeeping TALs and empty labels are skipped.
std::vector<Annotation> parse_edfplus_annotations(const EdfFile& file,
                                                  std::size_t signal_index);

/// Encodes one TAL; used to build annotation signals.
std::string encode_tal(double onset_s, double duration_s,
                       const std::vector<std::string>& labels);

/// Packs TAL text into int16 samples for an annotation signal record.
std::vector<std::int16_t> pack_tal_record(const std::string& text,
                                          std::int64_t samples_per_record);

}  // namespace sleepscore
