#include "rgfs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>

#include "rgfs/errors.hpp"

namespace rgfs {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'F', 'S', 'C', 'K', 'P', 'T'};

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }
void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }

void write_string(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    write_bytes(out, s.data(), s.size());
}

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    write_string(out, name);
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i)
        write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    write_bytes(out, t.data(), t.size() * sizeof(double));
}

void write_collection(std::ofstream& out, const NetworkParameters& params) {
    write_u64(out, params.tensor_count());
    for (const auto& [name, t] : params.entries()) write_tensor(out, name, t);
}

void read_bytes(std::ifstream& in, void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw TrainError("checkpoint truncated or corrupt");
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}

std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}

std::string read_string(std::ifstream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (1ULL << 20)) throw TrainError("checkpoint corrupt: implausible string length");
    std::string s(n, '\0');
    read_bytes(in, s.data(), n);
    return s;
}

/// Reads one tensor collection and validates it against the expected layout
/// (canonical parameter names and shapes of the archived architecture).
NetworkParameters read_collection(std::ifstream& in, const NetworkParameters& expected,
                                  const std::string& what) {
    const std::uint64_t count = read_u64(in);
    if (count != expected.tensor_count())
        throw TrainError("checkpoint corrupt: " + what + " holds " + std::to_string(count) +
                         " tensors, architecture expects " +
                         std::to_string(expected.tensor_count()));
    NetworkParameters out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = read_string(in);
        const auto& [expected_name, expected_tensor] = expected.entries()[i];
        if (name != expected_name)
            throw TrainError("checkpoint corrupt: " + what + " tensor " + std::to_string(i) +
                             " named '" + name + "', expected '" + expected_name + "'");
        const std::uint32_t rank = read_u32(in);
        std::vector<int> shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(read_u32(in));
        if (shape != expected_tensor.shape())
            throw TrainError("checkpoint corrupt: tensor '" + name + "' has unexpected shape");
        Tensor& t = out.add(name, shape);
        read_bytes(in, t.data(), t.size() * sizeof(double));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw TrainError("cannot write checkpoint: " + tmp.string());
        write_bytes(out, kMagic, sizeof kMagic);
        write_u32(out, kCheckpointVersion);
        write_string(out, state.arch.to_json());
        write_u64(out, state.episode_index);
        write_u64(out, state.root_seed);
        write_u64(out, state.adam.step);
        write_collection(out, state.params);
        write_collection(out, state.adam.m);
        write_collection(out, state.adam.v);
        if (!out) throw TrainError("checkpoint write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainError("cannot open checkpoint: " + path.string());
    char magic[8];
    read_bytes(in, magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw TrainError("not a checkpoint file: " + path.string());
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw TrainError("checkpoint version " + std::to_string(version) +
                         " is not supported; this build reads version " +
                         std::to_string(kCheckpointVersion));

    TrainState state;
    state.arch = ArchitectureConfig::from_json(read_string(in));
    state.episode_index = read_u64(in);
    state.root_seed = read_u64(in);
    state.adam.step = read_u64(in);

    // The canonical layout implied by the architecture is the validation
    // reference for every name and shape in the archive.
    const NetworkParameters reference = zero_parameters(state.arch);
    state.params = read_collection(in, reference, "parameters");
    state.adam.m = read_collection(in, reference, "first moments");
    state.adam.v = read_collection(in, reference, "second moments");
    if (!state.params.all_finite())
        throw TrainError("checkpoint corrupt: non-finite parameter values");
    return state;
}

}  // namespace rgfs
