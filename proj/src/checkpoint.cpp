#include "emgdis/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian; big-endian hosts are unsupported");

namespace emgdis {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'G', 'D', 'I', 'S', '0', '1'};

enum class RecordKind : uint8_t { F32 = 0, I64 = 1, F64 = 2 };

struct Record {
    RecordKind kind = RecordKind::F32;
    std::vector<int64_t> dims;
    std::vector<float> f32;
    std::vector<int64_t> i64;
    std::vector<double> f64;

    size_t count() const {
        size_t n = 1;
        for (int64_t d : dims) n *= static_cast<size_t>(d);
        return n;
    }
};

int64_t variant_code(Variant v) {
    switch (v) {
        case Variant::Proposed: return 0;
        case Variant::Erm: return 1;
        case Variant::POnly: return 2;
        case Variant::Mtl: return 3;
    }
    throw ValidationError("unknown variant");
}

Variant variant_from_code(int64_t c) {
    switch (c) {
        case 0: return Variant::Proposed;
        case 1: return Variant::Erm;
        case 2: return Variant::POnly;
        case 3: return Variant::Mtl;
    }
    throw IoError("checkpoint holds unknown variant code " + std::to_string(c));
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw IoError("cannot write checkpoint " + path);
    }

    void magic_and_count(uint64_t count) {
        out_.write(kMagic, sizeof(kMagic));
        raw(&count, sizeof(count));
    }

    void record_i64(const std::string& name, const std::vector<int64_t>& values,
                    const std::vector<int64_t>& dims) {
        header(name, RecordKind::I64, dims);
        raw(values.data(), values.size() * sizeof(int64_t));
    }

    void record_f64(const std::string& name, const std::vector<double>& values) {
        header(name, RecordKind::F64, {static_cast<int64_t>(values.size())});
        raw(values.data(), values.size() * sizeof(double));
    }

    void record_f32(const std::string& name, const float* values, size_t n,
                    const std::vector<int64_t>& dims) {
        header(name, RecordKind::F32, dims);
        raw(values, n * sizeof(float));
    }

    void finish() {
        out_.flush();
        if (!out_) throw IoError("short write to checkpoint " + path_);
    }

private:
    void header(const std::string& name, RecordKind kind, const std::vector<int64_t>& dims) {
        const uint32_t len = static_cast<uint32_t>(name.size());
        raw(&len, sizeof(len));
        out_.write(name.data(), static_cast<std::streamsize>(name.size()));
        const uint8_t k = static_cast<uint8_t>(kind);
        raw(&k, sizeof(k));
        const uint32_t nd = static_cast<uint32_t>(dims.size());
        raw(&nd, sizeof(nd));
        raw(dims.data(), dims.size() * sizeof(int64_t));
    }

    void raw(const void* p, size_t bytes) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
    }

    std::ofstream out_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open checkpoint " + path);
        char magic[8];
        raw(magic, sizeof(magic));
        if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
            throw IoError(path + " is not a checkpoint file (bad magic)");
    }

    std::map<std::string, Record> read_all() {
        uint64_t count = 0;
        raw(&count, sizeof(count));
        std::map<std::string, Record> records;
        for (uint64_t i = 0; i < count; ++i) {
            uint32_t len = 0;
            raw(&len, sizeof(len));
            if (len > 4096) throw IoError(path_ + ": implausible record name length");
            std::string name(len, '\0');
            raw(name.data(), len);
            uint8_t kind = 0;
            raw(&kind, sizeof(kind));
            if (kind > 2) throw IoError(path_ + ": unknown record kind for '" + name + "'");
            uint32_t nd = 0;
            raw(&nd, sizeof(nd));
            if (nd > 8) throw IoError(path_ + ": implausible rank for '" + name + "'");
            Record rec;
            rec.kind = static_cast<RecordKind>(kind);
            rec.dims.resize(nd);
            raw(rec.dims.data(), nd * sizeof(int64_t));
            for (int64_t d : rec.dims)
                if (d < 0 || d > (1LL << 32))
                    throw IoError(path_ + ": implausible dimension for '" + name + "'");
            const size_t n = rec.count();
            switch (rec.kind) {
                case RecordKind::F32:
                    rec.f32.resize(n);
                    raw(rec.f32.data(), n * sizeof(float));
                    break;
                case RecordKind::I64:
                    rec.i64.resize(n);
                    raw(rec.i64.data(), n * sizeof(int64_t));
                    break;
                case RecordKind::F64:
                    rec.f64.resize(n);
                    raw(rec.f64.data(), n * sizeof(double));
                    break;
            }
            if (!records.emplace(name, std::move(rec)).second)
                throw IoError(path_ + ": duplicate record '" + name + "'");
        }
        char extra;
        if (in_.read(&extra, 1)) throw IoError(path_ + ": trailing bytes after last record");
        return records;
    }

private:
    void raw(void* p, size_t bytes) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
        if (static_cast<size_t>(in_.gcount()) != bytes)
            throw IoError(path_ + ": truncated checkpoint");
    }

    std::ifstream in_;
    std::string path_;
};

std::vector<int64_t> to_i64(const std::vector<int>& v) {
    return {v.begin(), v.end()};
}

std::vector<int> to_int(const std::vector<int64_t>& v, const char* what) {
    std::vector<int> out;
    out.reserve(v.size());
    for (int64_t x : v) {
        if (x < INT32_MIN || x > INT32_MAX)
            throw IoError(std::string("checkpoint field ") + what + " out of int range");
        out.push_back(static_cast<int>(x));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, DualBranchNet<float>& net,
                     const CheckpointExtras& extras) {
    const auto params = net.parameters();
    const auto buffers = net.buffers();
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);

    Writer w(path);
    const uint64_t n_records = 4 + 8 + 8 + params.size() + buffers.size();
    w.magic_and_count(n_records);

    w.record_i64("meta.variant", {variant_code(net.variant)}, {1});
    w.record_i64("meta.seed", {std::bit_cast<int64_t>(net.seed)}, {1});
    const Arch& a = net.arch;
    w.record_i64("meta.arch",
                 {a.in_len, a.in_channels, a.ext_channels, a.ext_kernel, a.enc1_channels,
                  a.enc1_kernel, a.enc2_channels, a.enc2_kernel, a.bottleneck_dim, a.n_patterns,
                  a.n_subjects},
                 {11});
    w.record_f64("meta.dropout_rate", {a.dropout_rate});

    const TrainConfig& c = extras.config;
    w.record_i64("config.variant", {variant_code(c.variant)}, {1});
    w.record_i64("config.epochs", {c.epochs}, {1});
    w.record_i64("config.batch_size", {c.batch_size}, {1});
    w.record_f64("config.learning_rate", {c.learning_rate});
    w.record_f64("config.lambda_s", {c.lambda_s_init, c.lambda_s_max});
    w.record_f64("config.lambda_p", {c.lambda_p_init, c.lambda_p_max});
    w.record_i64("config.seed", {std::bit_cast<int64_t>(c.seed)}, {1});
    w.record_i64("config.iterations_per_step", {c.iterations_per_step}, {1});

    w.record_i64("bindings.gesture_classes", to_i64(extras.gesture_classes),
                 {static_cast<int64_t>(extras.gesture_classes.size())});
    w.record_i64("bindings.train_subjects", to_i64(extras.train_subjects),
                 {static_cast<int64_t>(extras.train_subjects.size())});
    w.record_i64("bindings.test_subjects", to_i64(extras.test_subjects),
                 {static_cast<int64_t>(extras.test_subjects.size())});
    w.record_f32("bindings.norm_mean", extras.norm_mean.data(), extras.norm_mean.size(),
                 {static_cast<int64_t>(extras.norm_mean.size())});
    w.record_f32("bindings.norm_std", extras.norm_std.data(), extras.norm_std.size(),
                 {static_cast<int64_t>(extras.norm_std.size())});
    w.record_i64("bindings.normalized", {extras.normalized ? 1 : 0}, {1});
    w.record_i64("bindings.window", {extras.window_samples, extras.step_samples}, {2});
    w.record_i64("bindings.fold", {extras.fold_index, extras.n_folds}, {2});

    for (const auto& p : params) {
        std::vector<int64_t> dims(p.t->shape.begin(), p.t->shape.end());
        w.record_f32("param." + p.name, p.t->v.data(), p.t->v.size(), dims);
    }
    for (const auto& b : buffers)
        w.record_f32("buffer." + b.name, b.data->data(), b.data->size(),
                     {static_cast<int64_t>(b.data->size())});
    w.finish();
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader reader(path);
    auto records = reader.read_all();

    auto take = [&records, &path](const std::string& name, RecordKind kind) -> Record {
        const auto it = records.find(name);
        if (it == records.end()) throw IoError(path + ": missing record '" + name + "'");
        if (it->second.kind != kind)
            throw IoError(path + ": record '" + name + "' has wrong type");
        Record rec = std::move(it->second);
        records.erase(it);
        return rec;
    };

    const Variant variant = variant_from_code(take("meta.variant", RecordKind::I64).i64.at(0));
    const uint64_t seed = std::bit_cast<uint64_t>(take("meta.seed", RecordKind::I64).i64.at(0));
    const auto arch_rec = take("meta.arch", RecordKind::I64);
    if (arch_rec.i64.size() != 11) throw IoError(path + ": meta.arch has wrong length");
    Arch arch;
    arch.in_len = static_cast<int>(arch_rec.i64[0]);
    arch.in_channels = static_cast<int>(arch_rec.i64[1]);
    arch.ext_channels = static_cast<int>(arch_rec.i64[2]);
    arch.ext_kernel = static_cast<int>(arch_rec.i64[3]);
    arch.enc1_channels = static_cast<int>(arch_rec.i64[4]);
    arch.enc1_kernel = static_cast<int>(arch_rec.i64[5]);
    arch.enc2_channels = static_cast<int>(arch_rec.i64[6]);
    arch.enc2_kernel = static_cast<int>(arch_rec.i64[7]);
    arch.bottleneck_dim = static_cast<int>(arch_rec.i64[8]);
    arch.dropout_rate = take("meta.dropout_rate", RecordKind::F64).f64.at(0);
    const int n_patterns = static_cast<int>(arch_rec.i64[9]);
    const int n_subjects = static_cast<int>(arch_rec.i64[10]);

    LoadedCheckpoint loaded;
    loaded.net = build_model<float>(variant, n_patterns, n_subjects, seed, arch);

    CheckpointExtras& x = loaded.extras;
    x.config.variant = variant_from_code(take("config.variant", RecordKind::I64).i64.at(0));
    x.config.epochs = static_cast<int>(take("config.epochs", RecordKind::I64).i64.at(0));
    x.config.batch_size = static_cast<int>(take("config.batch_size", RecordKind::I64).i64.at(0));
    x.config.learning_rate = take("config.learning_rate", RecordKind::F64).f64.at(0);
    const auto ls = take("config.lambda_s", RecordKind::F64).f64;
    const auto lp = take("config.lambda_p", RecordKind::F64).f64;
    if (ls.size() != 2 || lp.size() != 2) throw IoError(path + ": bad lambda records");
    x.config.lambda_s_init = ls[0];
    x.config.lambda_s_max = ls[1];
    x.config.lambda_p_init = lp[0];
    x.config.lambda_p_max = lp[1];
    x.config.seed = std::bit_cast<uint64_t>(take("config.seed", RecordKind::I64).i64.at(0));
    x.config.iterations_per_step =
        static_cast<int>(take("config.iterations_per_step", RecordKind::I64).i64.at(0));

    x.gesture_classes = to_int(take("bindings.gesture_classes", RecordKind::I64).i64,
                               "gesture_classes");
    x.train_subjects = to_int(take("bindings.train_subjects", RecordKind::I64).i64,
                              "train_subjects");
    x.test_subjects = to_int(take("bindings.test_subjects", RecordKind::I64).i64, "test_subjects");
    x.norm_mean = take("bindings.norm_mean", RecordKind::F32).f32;
    x.norm_std = take("bindings.norm_std", RecordKind::F32).f32;
    x.normalized = take("bindings.normalized", RecordKind::I64).i64.at(0) != 0;
    const auto win = take("bindings.window", RecordKind::I64).i64;
    if (win.size() != 2) throw IoError(path + ": bad window record");
    x.window_samples = static_cast<int>(win[0]);
    x.step_samples = static_cast<int>(win[1]);
    const auto fold = take("bindings.fold", RecordKind::I64).i64;
    if (fold.size() != 2) throw IoError(path + ": bad fold record");
    x.fold_index = static_cast<int>(fold[0]);
    x.n_folds = static_cast<int>(fold[1]);

    for (auto& p : loaded.net.parameters()) {
        auto rec = take("param." + p.name, RecordKind::F32);
        const std::vector<int64_t> expect(p.t->shape.begin(), p.t->shape.end());
        if (rec.dims != expect)
            throw IoError(path + ": parameter '" + p.name + "' has unexpected shape");
        p.t->v = std::move(rec.f32);
    }
    for (auto& b : loaded.net.buffers()) {
        auto rec = take("buffer." + b.name, RecordKind::F32);
        if (rec.f32.size() != b.data->size())
            throw IoError(path + ": buffer '" + b.name + "' has unexpected size");
        *b.data = std::move(rec.f32);
    }
    if (!records.empty())
        throw IoError(path + ": unrecognized record '" + records.begin()->first + "'");
    return loaded;
}

}  // namespace emgdis
