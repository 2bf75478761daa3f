#pragma once

#include "gcmcg/dataset.hpp"
#include "gcmcg/dsp.hpp"
#include "gcmcg/eval.hpp"

#include <map>
#include <string>
#include <vector>

namespace gcmcg::config {

// Flat "key = value" file with '#' comments; no sections, no nesting.
class Config {
public:
    static Config from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) const;
    double num(const std::string& key, double fallback) const;
    long integer(const std::string& key, long fallback) const;
    bool flag(const std::string& key, bool fallback) const;

    // "a;b;c" tokens
    std::vector<std::string> list(const std::string& key) const;
    // "0-5;6-10;11-15" channel groups, 0-based inclusive ranges or singletons
    std::vector<std::vector<std::size_t>> groups(const std::string& key) const;

private:
    std::map<std::string, std::string> kv_;
};

eval::CvOptions cv_options_from(const Config& cfg);
data::SynthSpec synth_spec_from(const Config& cfg);

} // namespace gcmcg::config
