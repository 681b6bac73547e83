#include "cseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "cseg/snapshot.hpp"

namespace cseg {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '!'};

void write_tensors(std::ostream& os, const std::vector<Tensor>& ts) {
    io::write_u32(os, static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) write_tensor(os, t);
}

std::vector<Tensor> read_tensors(std::istream& is, const char* what) {
    const std::uint32_t n = io::read_u32(is, what);
    if (n > (1u << 20)) throw FormatError(std::string("implausible tensor count in ") + what);
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(read_tensor(is));
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState<float>& optimizer,
                     const TrainerState& trainer, const std::string& rng_state,
                     const NormalizationStats& normalization) {
    // Serialize to memory first so a failed write never leaves a half-valid file behind.
    std::ostringstream os(std::ios::binary);
    os.write(kMagic, sizeof kMagic);
    io::write_u32(os, kCheckpointVersion);
    io::write_string(os, model.config().to_text());

    std::vector<const Tensor*> tensors;
    Model::visit(model, "", [&](const std::string&, const Tensor& t, ParamKind, std::size_t) { tensors.push_back(&t); });
    io::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) write_tensor(os, *t);

    io::write_string(os, to_string(optimizer.kind));
    io::write_u64(os, optimizer.step);
    write_tensors(os, optimizer.first);
    write_tensors(os, optimizer.second);

    io::write_u32(os, trainer.epoch);
    io::write_f64(os, trainer.best_score);
    io::write_u32(os, trainer.best_epoch);
    io::write_u32(os, trainer.stale_epochs);
    io::write_u32(os, trainer.stopped ? 1u : 0u);

    io::write_string(os, rng_state);

    io::write_u32(os, static_cast<std::uint32_t>(normalization.channels()));
    for (std::size_t c = 0; c < normalization.channels(); ++c) {
        io::write_f32(os, normalization.max[c]);
        io::write_f32(os, normalization.mean[c]);
        io::write_f32(os, normalization.std[c]);
    }
    os.write(kTrailer, sizeof kTrailer);

    const std::string bytes = os.str();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());

    char magic[sizeof kMagic];
    io::read_exact(is, magic, sizeof magic, "checkpoint magic");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + " is not a checkpoint");
    const std::uint32_t version = io::read_u32(is, "checkpoint version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const UNetConfig config = parse_config_text(io::read_string(is, "config"));
    Model model(config, 0);

    auto state = model.state();
    const std::uint32_t count = io::read_u32(is, "tensor count");
    if (count != state.size()) {
        throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                          std::to_string(state.size()));
    }
    for (auto& ref : state) {
        Tensor t = read_tensor(is);
        if (t.shape() != ref.tensor->shape()) {
            throw FormatError("shape mismatch for " + ref.name + ": file " + t.shape().str() + ", model " +
                              ref.tensor->shape().str());
        }
        *ref.tensor = std::move(t);
    }

    OptimizerState<float> opt;
    opt.kind = parse_optimizer_kind(io::read_string(is, "optimizer kind", 16));
    opt.step = io::read_u64(is, "optimizer step");
    opt.first = read_tensors(is, "optimizer state");
    opt.second = read_tensors(is, "optimizer state");

    TrainerState tr;
    tr.epoch = io::read_u32(is, "trainer state");
    tr.best_score = io::read_f64(is, "trainer state");
    tr.best_epoch = io::read_u32(is, "trainer state");
    tr.stale_epochs = io::read_u32(is, "trainer state");
    tr.stopped = io::read_u32(is, "trainer state") != 0;

    std::string rng = io::read_string(is, "rng state");

    NormalizationStats norm;
    const std::uint32_t channels = io::read_u32(is, "normalization");
    if (channels > 4096) throw FormatError("implausible normalization channel count");
    for (std::uint32_t c = 0; c < channels; ++c) {
        norm.max.push_back(io::read_f32(is, "normalization"));
        norm.mean.push_back(io::read_f32(is, "normalization"));
        norm.std.push_back(io::read_f32(is, "normalization"));
    }
    char trailer[sizeof kTrailer];
    io::read_exact(is, trailer, sizeof trailer, "checkpoint trailer");
    if (std::memcmp(trailer, kTrailer, sizeof kTrailer) != 0) throw FormatError("corrupt checkpoint trailer");

    return Checkpoint{std::move(model), std::move(opt), tr, std::move(rng), std::move(norm)};
}

}  // namespace cseg
