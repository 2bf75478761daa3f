#pragma once

#include "gcmcg/graph.hpp"
#include "gcmcg/linalg.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gcmcg::data {

struct Trial {
    std::uint16_t subject = 0;
    std::uint16_t label = 0;
    linalg::Mat samples; // C x S, f64 in memory, f32 on disk
};

struct DatasetContainer {
    std::uint32_t version = 1;
    std::size_t channels = 0;
    std::size_t samples = 0;
    float rate = 0.0f;
    std::size_t classes = 0;
    std::vector<Trial> trials;

    std::vector<std::string> subject_ids() const; // zero-padded, sorted unique
    static std::string subject_name(std::uint16_t subject);
};

// Binary container: magic "GCD1", u32 version, u32 C, u32 S, f32 rate, u32 Q,
// u32 n_trials, then per trial u16 subject, u16 label, C*S f32 row-major.
// Little-endian throughout.
void save_container(const DatasetContainer& c, const std::string& path);
DatasetContainer load_container(const std::string& path);

struct SynthSpec {
    std::size_t classes = 3;
    std::size_t channels = 16;
    std::size_t samples = 256;
    double rate = 160.0;
    std::size_t subjects = 8;
    std::size_t trials_per_subject = 120;
    std::vector<std::vector<std::size_t>> groups; // planted; default 3 contiguous blocks
    std::vector<double> class_freqs;              // default spread across bands
    double rhythm_amp = 40.0;
    double noise_sigma = 20.0;
    double common_noise = 0.0;   // shared across channels (volume-conduction-like)
    double artifact_noise = 0.0; // spatially striped sources crossing the groups
    std::size_t artifact_sources = 3;
    double hum_amp = 0.0;      // 60 Hz line interference
    double spike_rate = 0.0;   // expected spike bursts per trial
    double spike_amp = 150.0;
    std::uint64_t seed = 1;

    void fill_defaults();
    void validate() const;
};

struct SynthResult {
    DatasetContainer data;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> channel_cluster; // per channel planted index
    std::vector<std::size_t> class_group;     // class -> active group
};

// Class-dependent band-limited rhythm on a planted channel group over pinkish
// baseline noise; deterministic per (seed, subject, trial).
SynthResult synth(const SynthSpec& spec);

// Ground-truth sidecar (planted clusters + class map) as JSON.
void write_truth_sidecar(const SynthSpec& spec, const SynthResult& result,
                         const std::string& path);

// Electrode graph matching the planted layout: cliques per group with single
// bridges, identity electrode map.
graph::ElectrodeGraph synth_graph(const SynthSpec& spec);
void write_graph_files(const graph::ElectrodeGraph& g, const std::string& adjacency_path,
                       const std::string& map_path);

// CSV: header row of channel names, one row per sample. The label sidecar has
// lines "start,end,label,subject" with 0-based half-open sample ranges; label
// may be an integer or a name resolved through label_map. Trials are truncated
// to the first `window` samples; shorter segments are rejected.
DatasetContainer ingest_csv(const std::string& csv_path, double rate,
                            const std::string& labels_path, std::size_t window,
                            const std::map<std::string, int>& label_map = {});

} // namespace gcmcg::data
