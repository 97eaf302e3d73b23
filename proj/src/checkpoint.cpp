#include "softstack/checkpoint.hpp"

#include "softstack/tasks.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace softstack::checkpoint {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'T', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

} // namespace

void save(const std::string& path, const config::RunConfig& cfg, backbone::Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const std::string cfg_text = config::serialize(cfg);
    write_u64(os, cfg_text.size());
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    const auto refs = model.param_refs();
    write_u64(os, refs.size());
    std::vector<float> buf;
    for (const auto& r : refs) {
        write_u64(os, r.name.size());
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        write_u64(os, r.n);
        buf.resize(r.n);
        for (size_t i = 0; i < r.n; ++i) buf[i] = static_cast<float>(r.data[i]);
        os.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(sizeof(float) * r.n));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Loaded load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("corrupt checkpoint (bad magic): " + path);
    }
    const uint32_t version = read_u32(is);
    if (version != kVersion) throw std::runtime_error("unsupported checkpoint version");

    const uint64_t cfg_len = read_u64(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));

    Loaded out;
    out.cfg = config::parse(cfg_text);
    const tasks::Vocabulary vocab = tasks::Vocabulary::for_task(tasks::get_task(out.cfg.task));
    out.cfg.model.vocab_size = vocab.size();
    out.model = std::make_unique<backbone::Model>(out.cfg.model, /*seed=*/0);

    const uint64_t n_params = read_u64(is);
    auto refs = out.model->param_refs();
    if (n_params != refs.size()) throw std::runtime_error("corrupt checkpoint (parameter count mismatch)");

    std::vector<float> buf;
    for (auto& r : refs) {
        const uint64_t name_len = read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const uint64_t n = read_u64(is);
        if (!is || name != r.name || n != r.n) {
            throw std::runtime_error("corrupt checkpoint (array '" + name + "' mismatch)");
        }
        buf.resize(n);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sizeof(float) * n));
        for (size_t i = 0; i < n; ++i) r.data[i] = static_cast<double>(buf[i]);
    }
    if (!is) throw std::runtime_error("corrupt checkpoint (truncated): " + path);
    return out;
}

} // namespace softstack::checkpoint
