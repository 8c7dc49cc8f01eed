#include "rosaq/io.hpp"

#include "rosaq/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace rosaq {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

// Little-endian byte stream writer.
struct Writer {
    std::vector<std::uint8_t> bytes;

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void magic(const char m[4]) { raw(m, 4); }
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t b;
        std::memcpy(&b, &v, 4);
        u32(b);
    }
    void f64(double v) {
        std::uint64_t b;
        std::memcpy(&b, &v, 8);
        u64(b);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw format_error("truncated file");
    }
    void magic(const char m[4]) {
        need(4);
        if (std::memcmp(bytes.data() + pos, m, 4) != 0) {
            throw format_error(std::string("bad magic, expected \"") + std::string(m, 4) + "\"");
        }
        pos += 4;
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t b = u32();
        float v;
        std::memcpy(&v, &b, 4);
        return v;
    }
    double f64() {
        const std::uint64_t b = u64();
        double v;
        std::memcpy(&v, &b, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    std::vector<std::uint8_t> blob(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return out;
    }
    void expect_end() const {
        if (pos != bytes.size()) throw format_error("trailing bytes after payload");
    }
};

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open \"" + path.string() + "\"");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t version_check(std::uint32_t v) {
    if (v != kFormatVersion) {
        throw format_error("unsupported format version " + std::to_string(v));
    }
    return v;
}

} // namespace

void atomic_write_bytes(const std::filesystem::path& path,
                        const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw format_error("cannot write \"" + tmp.string() + "\"");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw format_error("short write to \"" + tmp.string() + "\"");
    }
    std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    atomic_write_bytes(path, bytes);
}

// ---- TensorFile ---------------------------------------------------------

TensorFile TensorFile::from_matrix(const DenseMatrix& m, std::uint32_t dtype) {
    TensorFile t;
    t.dtype = dtype;
    t.dims = {m.rows, m.cols};
    t.values = m.data;
    return t;
}

TensorFile TensorFile::from_vector(const std::vector<double>& v, std::uint32_t dtype) {
    TensorFile t;
    t.dtype = dtype;
    t.dims = {v.size()};
    t.values = v;
    return t;
}

std::uint64_t TensorFile::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

DenseMatrix TensorFile::to_matrix() const {
    if (dims.size() != 2) throw format_error("tensor is not 2-D");
    return DenseMatrix(static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                       values);
}

std::vector<double> TensorFile::to_vector() const {
    if (dims.size() != 1) throw format_error("tensor is not 1-D");
    return values;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& t) {
    if (t.dtype > 1) throw validation_error("tensor file: unknown dtype code");
    if (t.values.size() != t.element_count()) {
        throw validation_error("tensor file: payload length does not match dims");
    }
    Writer w;
    w.magic("RQTF");
    w.u32(kFormatVersion);
    w.u32(t.dtype);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) w.u64(d);
    if (t.dtype == 0) {
        for (double v : t.values) w.f32(static_cast<float>(v));
    } else {
        for (double v : t.values) w.f64(v);
    }
    atomic_write_bytes(path, w.bytes);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    Reader r(bytes);
    r.magic("RQTF");
    version_check(r.u32());
    TensorFile t;
    t.dtype = r.u32();
    if (t.dtype > 1) throw format_error("tensor file: unknown dtype code");
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw format_error("tensor file: implausible rank");
    t.dims.resize(ndim);
    for (auto& d : t.dims) d = r.u64();
    const std::uint64_t n = t.element_count();
    t.values.resize(n);
    if (t.dtype == 0) {
        for (auto& v : t.values) v = static_cast<double>(r.f32());
    } else {
        for (auto& v : t.values) v = r.f64();
    }
    r.expect_end();
    return t;
}

// ---- QuantFile ----------------------------------------------------------

void write_quant_file(const std::filesystem::path& path, const MixedPrecisionWeight& w) {
    w.validate();
    Writer out;
    out.magic("RQQF");
    out.u32(kFormatVersion);
    out.u32(static_cast<std::uint32_t>(w.cfg.bits));
    out.u32(static_cast<std::uint32_t>(w.cfg.group_size));
    out.u64(w.input_dim);
    out.u64(w.output_dim);
    out.u64(w.salient_k);
    for (std::size_t p : w.permutation) out.u32(static_cast<std::uint32_t>(p));
    for (double v : w.salient.data) out.f32(static_cast<float>(v));
    for (const QuantizedGroup& g : w.groups) {
        out.f32(static_cast<float>(g.scale));
        out.f32(static_cast<float>(g.offset));
        out.raw(g.codes.data(), g.codes.size());
    }
    atomic_write_bytes(path, out.bytes);
}

MixedPrecisionWeight read_quant_file(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    Reader r(bytes);
    r.magic("RQQF");
    version_check(r.u32());
    MixedPrecisionWeight w;
    const std::uint32_t bits = r.u32();
    const std::uint32_t group_size = r.u32();
    try {
        w.cfg = QuantConfig(static_cast<int>(bits), group_size);
    } catch (const validation_error& e) {
        throw format_error(std::string("quant file: ") + e.what());
    }
    w.input_dim = static_cast<std::size_t>(r.u64());
    w.output_dim = static_cast<std::size_t>(r.u64());
    w.salient_k = static_cast<std::size_t>(r.u64());
    if (w.salient_k > w.input_dim || w.input_dim == 0 || w.output_dim == 0) {
        throw format_error("quant file: inconsistent dimensions");
    }
    w.permutation.resize(w.input_dim);
    for (auto& p : w.permutation) p = r.u32();

    w.salient = DenseMatrix(w.salient_k, w.output_dim);
    for (double& v : w.salient.data) v = static_cast<double>(r.f32());

    const std::size_t quantized = w.input_dim - w.salient_k;
    const std::size_t ng =
        quantized == 0 ? 0 : (quantized + w.cfg.group_size - 1) / w.cfg.group_size;
    w.groups.resize(ng * w.output_dim);
    for (std::size_t g = 0; g < ng; ++g) {
        const std::size_t channels = w.group_channels(g);
        for (std::size_t c = 0; c < w.output_dim; ++c) {
            QuantizedGroup& q = w.groups[g * w.output_dim + c];
            q.bits = w.cfg.bits;
            q.count = channels;
            q.scale = static_cast<double>(r.f32());
            q.offset = static_cast<double>(r.f32());
            q.codes = r.blob(packed_bytes(channels, q.bits));
            // Code range is implied by the bit width; verify the padding.
            const auto codes = unpack_codes(q.codes, q.bits, q.count);
            (void)codes;
        }
    }
    r.expect_end();
    try {
        w.validate();
    } catch (const std::exception& e) {
        throw format_error(std::string("quant file: ") + e.what());
    }
    return w;
}

std::uint64_t quant_salient_bytes(std::uint64_t cols, std::uint64_t salient) {
    return salient * cols * 4;
}

std::uint64_t quant_code_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t salient,
                               int bits, std::uint64_t group_size) {
    const std::uint64_t quantized = rows - salient;
    std::uint64_t per_col = 0;
    for (std::uint64_t begin = 0; begin < quantized; begin += group_size) {
        const std::uint64_t channels = std::min<std::uint64_t>(group_size, quantized - begin);
        per_col += (channels * static_cast<std::uint64_t>(bits) + 7) / 8;
    }
    return per_col * cols;
}

std::uint64_t quant_metadata_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t salient,
                                   std::uint64_t group_size) {
    const std::uint64_t quantized = rows - salient;
    const std::uint64_t ng = quantized == 0 ? 0 : (quantized + group_size - 1) / group_size;
    return ng * cols * 8; // binary32 scale + offset per record
}

std::uint64_t quant_file_total_bytes(std::uint64_t rows, std::uint64_t cols,
                                     std::uint64_t salient, int bits, std::uint64_t group_size) {
    const std::uint64_t header = 4 + 4 + 4 + 4 + 8 + 8 + 8;
    const std::uint64_t permutation = rows * 4;
    return header + permutation + quant_salient_bytes(cols, salient) +
           quant_code_bytes(rows, cols, salient, bits, group_size) +
           quant_metadata_bytes(rows, cols, salient, group_size);
}

// ---- Accumulator file ----------------------------------------------------

void write_accumulator(const std::filesystem::path& path, const CalibrationAccumulator& acc) {
    Writer w;
    w.magic("RQAF");
    w.u32(kFormatVersion);
    const auto ids = acc.site_ids();
    w.u32(static_cast<std::uint32_t>(ids.size()));
    for (const auto& id : ids) {
        const auto& s = acc.site(id);
        w.str(id);
        w.u64(s.dim);
        w.u64(s.count);
        w.u8(s.keep_raw ? 1 : 0);
        for (double v : s.gram_acc.data) w.f64(v);
        for (double v : s.abs_sum) w.f64(v);
        if (s.keep_raw) {
            for (double v : s.raw) w.f64(v);
        }
    }
    atomic_write_bytes(path, w.bytes);
}

CalibrationAccumulator read_accumulator(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    Reader r(bytes);
    r.magic("RQAF");
    version_check(r.u32());
    CalibrationAccumulator acc;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string id = r.str();
        const std::size_t dim = static_cast<std::size_t>(r.u64());
        const std::size_t rows = static_cast<std::size_t>(r.u64());
        const bool keep_raw = r.u8() != 0;
        acc.register_site(id, dim, keep_raw);
        DenseMatrix gram_acc(dim, dim);
        for (double& v : gram_acc.data) v = r.f64();
        std::vector<double> abs_sum(dim);
        for (double& v : abs_sum) v = r.f64();
        std::vector<double> raw;
        if (keep_raw) {
            raw.resize(rows * dim);
            for (double& v : raw) v = r.f64();
        }
        acc.restore_site(id, rows, std::move(gram_acc), std::move(abs_sum), std::move(raw));
    }
    r.expect_end();
    return acc;
}

// ---- Dense model file ------------------------------------------------------

void write_model_file(const std::filesystem::path& path, const BlockConfig& cfg,
                      const BlockWeights& weights) {
    weights.validate(cfg);
    Writer w;
    w.magic("RQMF");
    w.u32(kFormatVersion);
    w.u64(cfg.d);
    w.u64(cfg.heads);
    w.u64(cfg.d_ff);
    w.f64(cfg.eps);
    auto tensor = [&w](const std::string& name, const DenseMatrix& m) {
        w.str(name);
        w.u64(m.rows);
        w.u64(m.cols);
        for (double v : m.data) w.f64(v);
    };
    auto vec = [&w](const std::string& name, const std::vector<double>& v) {
        w.str(name);
        w.u64(1);
        w.u64(v.size());
        for (double x : v) w.f64(x);
    };
    tensor("wq", weights.wq);
    tensor("wk", weights.wk);
    tensor("wv", weights.wv);
    tensor("wo", weights.wo);
    tensor("wu", weights.wu);
    tensor("wg", weights.wg);
    tensor("wd", weights.wd);
    vec("attn_gain", weights.attn_gain);
    vec("ffn_gain", weights.ffn_gain);
    atomic_write_bytes(path, w.bytes);
}

std::pair<BlockConfig, BlockWeights> read_model_file(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    Reader r(bytes);
    r.magic("RQMF");
    version_check(r.u32());
    BlockConfig cfg;
    cfg.d = static_cast<std::size_t>(r.u64());
    cfg.heads = static_cast<std::size_t>(r.u64());
    cfg.d_ff = static_cast<std::size_t>(r.u64());
    cfg.eps = r.f64();

    BlockWeights weights;
    auto read_named = [&r]() {
        const std::string name = r.str();
        const std::size_t rows = static_cast<std::size_t>(r.u64());
        const std::size_t cols = static_cast<std::size_t>(r.u64());
        std::vector<double> data(rows * cols);
        for (double& v : data) v = r.f64();
        return std::make_pair(name, DenseMatrix(rows, cols, std::move(data)));
    };
    for (int i = 0; i < 9; ++i) {
        auto [name, m] = read_named();
        if (name == "wq") weights.wq = std::move(m);
        else if (name == "wk") weights.wk = std::move(m);
        else if (name == "wv") weights.wv = std::move(m);
        else if (name == "wo") weights.wo = std::move(m);
        else if (name == "wu") weights.wu = std::move(m);
        else if (name == "wg") weights.wg = std::move(m);
        else if (name == "wd") weights.wd = std::move(m);
        else if (name == "attn_gain") weights.attn_gain = m.data;
        else if (name == "ffn_gain") weights.ffn_gain = m.data;
        else throw format_error("model file: unknown tensor \"" + name + "\"");
    }
    r.expect_end();
    try {
        weights.validate(cfg);
    } catch (const std::exception& e) {
        throw format_error(std::string("model file: ") + e.what());
    }
    return {cfg, weights};
}

// ---- Quantized model directory ----------------------------------------------

namespace {

void save_linear(const std::filesystem::path& dir, const std::string& name,
                 const QuantizedLinear& lin, nlohmann::json& files) {
    nlohmann::json j;
    j["rotated_input"] = lin.rotated_input;
    if (lin.passthrough) {
        j["kind"] = "dense";
        j["file"] = name + ".rqtf";
        write_tensor_file(dir / (name + ".rqtf"), TensorFile::from_matrix(lin.fp, 1));
    } else {
        j["kind"] = "mixed";
        j["file"] = name + ".rqqf";
        write_quant_file(dir / (name + ".rqqf"), lin.mixed);
    }
    files[name] = std::move(j);
}

QuantizedLinear load_linear(const std::filesystem::path& dir, const nlohmann::json& j) {
    QuantizedLinear lin;
    lin.rotated_input = j.at("rotated_input").get<bool>();
    const std::string kind = j.at("kind").get<std::string>();
    const std::string file = j.at("file").get<std::string>();
    if (kind == "dense") {
        lin.passthrough = true;
        lin.fp = read_tensor_file(dir / file).to_matrix();
    } else if (kind == "mixed") {
        lin.passthrough = false;
        lin.mixed = read_quant_file(dir / file);
    } else {
        throw format_error("manifest: unknown layer kind \"" + kind + "\"");
    }
    return lin;
}

} // namespace

void save_quantized_model(const std::filesystem::path& dir, const QuantizedBlock& qb) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = {{"d", qb.cfg.d},
                          {"heads", qb.cfg.heads},
                          {"d_ff", qb.cfg.d_ff},
                          {"eps", qb.cfg.eps}};
    manifest["plan"] = qb.plan.to_json();
    manifest["wo_mode"] = rotation_mode_name(qb.wo_mode);

    nlohmann::json files;
    save_linear(dir, "wq", qb.wq, files);
    save_linear(dir, "wk", qb.wk, files);
    save_linear(dir, "wv", qb.wv, files);
    if (qb.wo_mode == RotationMode::HeadWisePCA) {
        for (std::size_t h = 0; h < qb.wo_heads.size(); ++h) {
            save_linear(dir, "wo_head_" + std::to_string(h), qb.wo_heads[h], files);
        }
    } else {
        save_linear(dir, "wo", qb.wo_single, files);
    }
    save_linear(dir, "wu", qb.wu, files);
    save_linear(dir, "wg", qb.wg, files);
    save_linear(dir, "wd", qb.wd, files);
    manifest["files"] = std::move(files);

    auto save_rotation = [&](const char* name, const std::optional<DenseMatrix>& r) {
        if (r) {
            write_tensor_file(dir / (std::string(name) + ".rqtf"), TensorFile::from_matrix(*r, 1));
            manifest[name] = std::string(name) + ".rqtf";
        }
    };
    save_rotation("r_mhsa", qb.r_mhsa);
    save_rotation("r_ffn", qb.r_ffn);
    save_rotation("r_wo_global", qb.r_wo_global);

    write_tensor_file(dir / "attn_gain.rqtf", TensorFile::from_vector(qb.attn_gain, 1));
    write_tensor_file(dir / "ffn_gain.rqtf", TensorFile::from_vector(qb.ffn_gain, 1));
    if (!qb.wd_scale.empty()) {
        write_tensor_file(dir / "wd_scale.rqtf", TensorFile::from_vector(qb.wd_scale, 1));
        manifest["wd_scale"] = "wd_scale.rqtf";
    }

    atomic_write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

QuantizedBlock load_quantized_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw format_error("cannot open manifest in \"" + dir.string() + "\"");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("manifest: ") + e.what());
    }

    QuantizedBlock qb;
    const auto& cj = manifest.at("config");
    qb.cfg.d = cj.at("d").get<std::size_t>();
    qb.cfg.heads = cj.at("heads").get<std::size_t>();
    qb.cfg.d_ff = cj.at("d_ff").get<std::size_t>();
    qb.cfg.eps = cj.at("eps").get<double>();
    qb.plan = LayerQuantPlan::from_json(manifest.at("plan"));
    qb.wo_mode = rotation_mode_from_name(manifest.at("wo_mode").get<std::string>());

    const auto& files = manifest.at("files");
    qb.wq = load_linear(dir, files.at("wq"));
    qb.wk = load_linear(dir, files.at("wk"));
    qb.wv = load_linear(dir, files.at("wv"));
    if (qb.wo_mode == RotationMode::HeadWisePCA) {
        qb.wo_heads.resize(qb.cfg.heads);
        for (std::size_t h = 0; h < qb.cfg.heads; ++h) {
            qb.wo_heads[h] = load_linear(dir, files.at("wo_head_" + std::to_string(h)));
        }
    } else {
        qb.wo_single = load_linear(dir, files.at("wo"));
    }
    qb.wu = load_linear(dir, files.at("wu"));
    qb.wg = load_linear(dir, files.at("wg"));
    qb.wd = load_linear(dir, files.at("wd"));

    auto load_rotation = [&](const char* name) -> std::optional<DenseMatrix> {
        if (!manifest.contains(name)) return std::nullopt;
        return read_tensor_file(dir / manifest.at(name).get<std::string>()).to_matrix();
    };
    qb.r_mhsa = load_rotation("r_mhsa");
    qb.r_ffn = load_rotation("r_ffn");
    qb.r_wo_global = load_rotation("r_wo_global");

    qb.attn_gain = read_tensor_file(dir / "attn_gain.rqtf").to_vector();
    qb.ffn_gain = read_tensor_file(dir / "ffn_gain.rqtf").to_vector();
    if (manifest.contains("wd_scale")) {
        qb.wd_scale = read_tensor_file(dir / manifest.at("wd_scale").get<std::string>()).to_vector();
    }
    return qb;
}

} // namespace rosaq
