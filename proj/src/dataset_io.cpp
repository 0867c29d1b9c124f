#include "emgdis/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are unsupported");

namespace emgdis {

namespace {

std::string recording_filename(const Recording& r) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "s%03d_g%03d_t%02d.bin", r.subject_id, r.gesture_id,
                  r.trial_id);
    return buf;
}

std::vector<float> read_binary_signal(const fs::path& path, int samples, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open recording file " + path.string());
    const size_t expect = static_cast<size_t>(samples) * channels;
    std::vector<float> data(expect);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expect * 4));
    if (static_cast<size_t>(in.gcount()) != expect * 4)
        throw IoError("recording file " + path.string() + " is shorter than manifest claims (" +
                      std::to_string(samples) + " x " + std::to_string(channels) + " floats)");
    char extra;
    if (in.read(&extra, 1))
        throw IoError("recording file " + path.string() + " is longer than manifest claims");
    return data;
}

std::vector<float> read_csv_signal(const fs::path& path, int samples, int channels) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open recording file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("recording file " + path.string() + " is empty");
    {
        std::ostringstream expect;
        for (int c = 0; c < channels; ++c) {
            if (c) expect << ',';
            expect << "ch" << c;
        }
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != expect.str())
            throw IoError("recording file " + path.string() + " header is '" + line +
                          "', expected '" + expect.str() + "'");
    }
    std::vector<float> data;
    data.reserve(static_cast<size_t>(samples) * channels);
    int row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                data.push_back(std::stof(cell));
            } catch (const std::exception&) {
                throw IoError("recording file " + path.string() + " row " + std::to_string(row) +
                              " has non-numeric cell '" + cell + "'");
            }
            ++cols;
        }
        if (cols != channels)
            throw IoError("recording file " + path.string() + " row " + std::to_string(row) +
                          " has " + std::to_string(cols) + " columns, expected " +
                          std::to_string(channels));
        ++row;
    }
    if (row != samples)
        throw IoError("recording file " + path.string() + " has " + std::to_string(row) +
                      " rows, manifest claims " + std::to_string(samples));
    return data;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<Recording>& recordings) {
    if (recordings.empty()) throw ValidationError("no recordings to save");
    fs::create_directories(dir);

    ordered_json manifest;
    manifest["version"] = 1;
    manifest["recordings"] = ordered_json::array();
    for (const auto& r : recordings) {
        r.validate();
        const std::string name = recording_filename(r);
        ordered_json entry;
        entry["subject_id"] = r.subject_id;
        entry["gesture_id"] = r.gesture_id;
        entry["trial_id"] = r.trial_id;
        entry["sample_rate"] = r.sample_rate;
        entry["channels"] = r.channels;
        entry["samples"] = r.samples;
        entry["file"] = name;
        manifest["recordings"].push_back(entry);

        std::ofstream out(fs::path(dir) / name, std::ios::binary);
        if (!out) throw IoError("cannot write recording file " + name + " in " + dir);
        out.write(reinterpret_cast<const char*>(r.signal.data()),
                  static_cast<std::streamsize>(r.signal.size() * 4));
        if (!out) throw IoError("short write to recording file " + name);
    }

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot write manifest.json in " + dir);
    mf << manifest.dump(2) << '\n';
}

std::vector<Recording> load_manifest(const std::string& dir, std::vector<std::string>* warnings) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("manifest not found: " + mpath.string());
    ordered_json manifest;
    try {
        mf >> manifest;
    } catch (const std::exception& e) {
        throw IoError("cannot parse " + mpath.string() + ": " + e.what());
    }
    if (!manifest.contains("recordings") || !manifest["recordings"].is_array())
        throw IoError(mpath.string() + " has no recordings array");

    std::vector<int> excluded;
    if (manifest.contains("exclude_subjects")) {
        for (const auto& v : manifest["exclude_subjects"]) excluded.push_back(v.get<int>());
    }

    std::vector<Recording> out;
    for (const auto& entry : manifest["recordings"]) {
        Recording r;
        try {
            r.subject_id = entry.at("subject_id").get<int>();
            r.gesture_id = entry.at("gesture_id").get<int>();
            r.trial_id = entry.at("trial_id").get<int>();
            r.sample_rate = entry.at("sample_rate").get<double>();
            r.channels = entry.at("channels").get<int>();
            r.samples = entry.at("samples").get<int>();
        } catch (const std::exception& e) {
            throw IoError("bad recording entry in manifest: " + std::string(e.what()));
        }
        const std::string file = entry.at("file").get<std::string>();
        if (std::find(excluded.begin(), excluded.end(), r.subject_id) != excluded.end()) {
            if (warnings)
                warnings->push_back("subject " + std::to_string(r.subject_id) +
                                    " excluded by manifest (" + file + ")");
            continue;
        }
        const fs::path fpath = fs::path(dir) / file;
        if (fpath.extension() == ".csv")
            r.signal = read_csv_signal(fpath, r.samples, r.channels);
        else
            r.signal = read_binary_signal(fpath, r.samples, r.channels);
        r.validate();
        out.push_back(std::move(r));
    }
    if (out.empty()) throw IoError("manifest " + mpath.string() + " yields no recordings");
    return out;
}

SynthConfig load_synth_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open synth config " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("cannot parse synth config " + path + ": " + e.what());
    }
    SynthConfig cfg;
    try {
        if (j.contains("n_subjects")) cfg.n_subjects = j["n_subjects"].get<int>();
        if (j.contains("n_gestures")) cfg.n_gestures = j["n_gestures"].get<int>();
        if (j.contains("trials_per_gesture"))
            cfg.trials_per_gesture = j["trials_per_gesture"].get<int>();
        if (j.contains("duration_s")) cfg.duration_s = j["duration_s"].get<double>();
        if (j.contains("sample_rate")) cfg.sample_rate = j["sample_rate"].get<double>();
        if (j.contains("channels")) cfg.channels = j["channels"].get<int>();
        if (j.contains("alpha")) cfg.alpha = j["alpha"].get<double>();
        if (j.contains("noise")) cfg.noise = j["noise"].get<double>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    } catch (const std::exception& e) {
        throw IoError("bad synth config " + path + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

void save_synth_config(const std::string& path, const SynthConfig& cfg) {
    ordered_json j;
    j["n_subjects"] = cfg.n_subjects;
    j["n_gestures"] = cfg.n_gestures;
    j["trials_per_gesture"] = cfg.trials_per_gesture;
    j["duration_s"] = cfg.duration_s;
    j["sample_rate"] = cfg.sample_rate;
    j["channels"] = cfg.channels;
    j["alpha"] = cfg.alpha;
    j["noise"] = cfg.noise;
    j["seed"] = cfg.seed;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write synth config " + path);
    out << j.dump(2) << '\n';
}

}  // namespace emgdis
