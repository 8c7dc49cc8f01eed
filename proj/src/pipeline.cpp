#include "rosaq/pipeline.hpp"

#include "rosaq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace rosaq {

std::vector<double> CalibrationAccumulator::Site::mean_abs() const {
    if (count == 0) {
        throw validation_error("calibration site has no samples");
    }
    std::vector<double> m(abs_sum);
    for (double& v : m) v /= static_cast<double>(count);
    return m;
}

DenseMatrix CalibrationAccumulator::Site::raw_matrix() const {
    if (!keep_raw) {
        throw validation_error("calibration site does not retain raw rows");
    }
    DenseMatrix m(count, dim);
    m.data = raw;
    m.data.resize(count * dim, 0.0);
    return m;
}

void CalibrationAccumulator::register_site(const std::string& id, std::size_t dim,
                                           bool keep_raw) {
    if (dim == 0) throw validation_error("register_site: zero dimension");
    if (sites_.count(id)) throw validation_error("register_site: duplicate site \"" + id + "\"");
    Site s;
    s.dim = dim;
    s.gram_acc = DenseMatrix(dim, dim);
    s.abs_sum.assign(dim, 0.0);
    s.keep_raw = keep_raw;
    sites_.emplace(id, std::move(s));
}

const CalibrationAccumulator::Site& CalibrationAccumulator::site(const std::string& id) const {
    auto it = sites_.find(id);
    if (it == sites_.end()) throw validation_error("unknown calibration site \"" + id + "\"");
    return it->second;
}

std::vector<std::string> CalibrationAccumulator::site_ids() const {
    std::vector<std::string> ids;
    ids.reserve(sites_.size());
    for (const auto& [id, s] : sites_) ids.push_back(id);
    return ids;
}

void CalibrationAccumulator::accumulate(const std::string& id, const DenseMatrix& activations) {
    auto it = sites_.find(id);
    if (it == sites_.end()) throw validation_error("unknown calibration site \"" + id + "\"");
    Site& s = it->second;
    if (activations.cols != s.dim) {
        throw validation_error("accumulate: activation width does not match site \"" + id + "\"");
    }
    if (activations.rows == 0) return;

    const DenseMatrix g = gram(activations);
    for (std::size_t i = 0; i < s.dim * s.dim; ++i) s.gram_acc.data[i] += g.data[i];
    for (std::size_t r = 0; r < activations.rows; ++r) {
        for (std::size_t j = 0; j < s.dim; ++j) {
            s.abs_sum[j] += std::abs(activations(r, j));
        }
    }
    if (s.keep_raw) {
        s.raw.insert(s.raw.end(), activations.data.begin(), activations.data.end());
    }
    s.count += activations.rows;
    rotation_cache_.erase(id);
}

const EigenDecomposition& CalibrationAccumulator::rotation(const std::string& id) const {
    auto cached = rotation_cache_.find(id);
    if (cached != rotation_cache_.end()) return cached->second;
    const Site& s = site(id);
    if (s.count == 0) {
        throw validation_error("rotation requested for empty site \"" + id + "\"");
    }
    auto [it, inserted] = rotation_cache_.emplace(id, pca_rotation(s.gram_acc));
    return it->second;
}

void CalibrationAccumulator::merge(const CalibrationAccumulator& other) {
    for (const auto& [id, os] : other.sites_) {
        auto it = sites_.find(id);
        if (it == sites_.end()) {
            sites_.emplace(id, os);
            continue;
        }
        Site& s = it->second;
        if (s.dim != os.dim) throw validation_error("merge: site dimension mismatch at \"" + id + "\"");
        for (std::size_t i = 0; i < s.dim * s.dim; ++i) s.gram_acc.data[i] += os.gram_acc.data[i];
        for (std::size_t j = 0; j < s.dim; ++j) s.abs_sum[j] += os.abs_sum[j];
        if (s.keep_raw && os.keep_raw) {
            s.raw.insert(s.raw.end(), os.raw.begin(), os.raw.end());
        } else {
            s.keep_raw = false;
            s.raw.clear();
        }
        s.count += os.count;
    }
    rotation_cache_.clear();
}

void CalibrationAccumulator::restore_site(const std::string& id, std::size_t count,
                                          DenseMatrix gram_acc, std::vector<double> abs_sum,
                                          std::vector<double> raw) {
    auto it = sites_.find(id);
    if (it == sites_.end()) throw validation_error("restore_site: unregistered site \"" + id + "\"");
    Site& s = it->second;
    if (gram_acc.rows != s.dim || gram_acc.cols != s.dim || abs_sum.size() != s.dim ||
        (s.keep_raw && raw.size() != count * s.dim)) {
        throw validation_error("restore_site: shape mismatch at \"" + id + "\"");
    }
    s.count = count;
    s.gram_acc = std::move(gram_acc);
    s.abs_sum = std::move(abs_sum);
    s.raw = std::move(raw);
    rotation_cache_.erase(id);
}

EigenDecomposition compute_rotation(const CalibrationAccumulator& acc, const std::string& id) {
    return acc.rotation(id);
}

std::vector<EigenDecomposition> headwise_rotations(const CalibrationAccumulator& acc,
                                                   const std::vector<std::string>& head_sites) {
    if (head_sites.empty()) throw validation_error("headwise_rotations: no head sites");
    std::vector<EigenDecomposition> out;
    out.reserve(head_sites.size());
    std::size_t dim = acc.site(head_sites.front()).dim;
    for (const auto& id : head_sites) {
        const auto& s = acc.site(id);
        if (s.dim != dim) throw validation_error("headwise_rotations: heads disagree on width");
        if (s.count == 0) throw validation_error("headwise_rotations: empty head site \"" + id + "\"");
        out.push_back(acc.rotation(id));
    }
    return out;
}

EigenDecomposition global_mhsa_rotation(const CalibrationAccumulator& acc,
                                        const std::string& concat_site) {
    const auto& s = acc.site(concat_site);
    if (s.count == 0) throw validation_error("global_mhsa_rotation: empty site");
    return acc.rotation(concat_site);
}

const char* selection_mode_name(SelectionMode m) {
    switch (m) {
        case SelectionMode::Top: return "top";
        case SelectionMode::Bottom: return "bottom";
        case SelectionMode::Random: return "random";
        case SelectionMode::TopAndBottom: return "top_and_bottom";
    }
    return "top";
}

SelectionMode selection_mode_from_name(const std::string& name) {
    if (name == "top") return SelectionMode::Top;
    if (name == "bottom") return SelectionMode::Bottom;
    if (name == "random") return SelectionMode::Random;
    if (name == "top_and_bottom") return SelectionMode::TopAndBottom;
    throw validation_error("unknown selection mode \"" + name + "\"");
}

std::vector<std::size_t> select_salient(std::size_t dim, const SalientSelection& sel,
                                        bool require_aligned) {
    if (sel.k > dim) throw validation_error("select_salient: k exceeds channel count");
    if (require_aligned && sel.k % 32 != 0) {
        throw validation_error("select_salient: k must be a multiple of 32");
    }
    std::vector<std::size_t> idx;
    idx.reserve(sel.k);
    switch (sel.mode) {
        case SelectionMode::Top:
            for (std::size_t i = 0; i < sel.k; ++i) idx.push_back(i);
            break;
        case SelectionMode::Bottom:
            for (std::size_t i = dim - sel.k; i < dim; ++i) idx.push_back(i);
            break;
        case SelectionMode::Random: {
            std::mt19937_64 rng(sel.seed);
            std::uniform_int_distribution<std::size_t> off(0, dim - sel.k);
            const std::size_t start = sel.k == 0 ? 0 : off(rng);
            for (std::size_t i = 0; i < sel.k; ++i) idx.push_back(start + i);
            break;
        }
        case SelectionMode::TopAndBottom: {
            if (sel.k % 2 != 0) throw validation_error("select_salient: top_and_bottom needs even k");
            const std::size_t half = sel.k / 2;
            for (std::size_t i = 0; i < half; ++i) idx.push_back(i);
            for (std::size_t i = dim - half; i < dim; ++i) idx.push_back(i);
            break;
        }
    }
    return idx;
}

std::size_t MixedPrecisionWeight::group_channels(std::size_t g) const {
    const std::size_t quantized = input_dim - salient_k;
    const std::size_t begin = g * cfg.group_size;
    return std::min(cfg.group_size, quantized - begin);
}

void MixedPrecisionWeight::validate() const {
    if (permutation.size() != input_dim) {
        throw format_error("mixed weight: permutation length mismatch");
    }
    std::vector<bool> seen(input_dim, false);
    for (std::size_t p : permutation) {
        if (p >= input_dim || seen[p]) throw format_error("mixed weight: invalid permutation");
        seen[p] = true;
    }
    if (salient.rows != salient_k || (salient_k > 0 && salient.cols != output_dim)) {
        throw format_error("mixed weight: salient block shape mismatch");
    }
    const std::size_t quantized = input_dim - salient_k;
    const std::size_t ng = quantized == 0 ? 0 : (quantized + cfg.group_size - 1) / cfg.group_size;
    if (groups.size() != ng * output_dim) {
        throw format_error("mixed weight: group record count mismatch");
    }
    for (std::size_t g = 0; g < ng; ++g) {
        const std::size_t channels = group_channels(g);
        for (std::size_t c = 0; c < output_dim; ++c) {
            const QuantizedGroup& q = groups[g * output_dim + c];
            if (q.count != channels || q.bits != cfg.bits) {
                throw format_error("mixed weight: group record shape mismatch");
            }
            if (q.codes.size() != packed_bytes(q.count, q.bits)) {
                throw format_error("mixed weight: corrupt packed length");
            }
        }
    }
}

MixedPrecisionWeight transform_weight(const DenseMatrix& w, const EigenDecomposition* rotation,
                                      const SalientSelection& sel, const QuantConfig& cfg) {
    const std::size_t d = w.rows;
    const std::size_t dprime = w.cols;
    if (d == 0 || dprime == 0) throw validation_error("transform_weight: empty weight");
    if (rotation && rotation->dim() != d) {
        throw validation_error("transform_weight: rotation dimension does not match weight input");
    }

    // Rotated weight R^T W; identity rotation leaves W untouched (bitwise).
    DenseMatrix rotated = rotation ? matmul(transpose(rotation->eigenvectors), w) : w;

    const std::vector<std::size_t> chosen = select_salient(d, sel, false);
    std::vector<bool> is_salient(d, false);
    for (std::size_t i : chosen) is_salient[i] = true;

    MixedPrecisionWeight out;
    out.cfg = cfg;
    out.input_dim = d;
    out.output_dim = dprime;
    out.salient_k = chosen.size();
    out.permutation = chosen;
    for (std::size_t i = 0; i < d; ++i) {
        if (!is_salient[i]) out.permutation.push_back(i);
    }

    out.salient = DenseMatrix(out.salient_k, dprime);
    for (std::size_t i = 0; i < out.salient_k; ++i) {
        const std::size_t src = out.permutation[i];
        for (std::size_t c = 0; c < dprime; ++c) {
            out.salient(i, c) = rotated(src, c);
        }
    }

    const std::size_t quantized = d - out.salient_k;
    const std::size_t ng = quantized == 0 ? 0 : (quantized + cfg.group_size - 1) / cfg.group_size;
    out.groups.resize(ng * dprime);
#pragma omp parallel for schedule(static)
    for (std::int64_t cc = 0; cc < static_cast<std::int64_t>(dprime); ++cc) {
        const std::size_t c = static_cast<std::size_t>(cc);
        std::vector<double> slice;
        for (std::size_t g = 0; g < ng; ++g) {
            const std::size_t begin = out.salient_k + g * cfg.group_size;
            const std::size_t channels = out.group_channels(g);
            slice.resize(channels);
            for (std::size_t i = 0; i < channels; ++i) {
                slice[i] = rotated(out.permutation[begin + i], c);
            }
            out.groups[g * dprime + c] = quantize_group(slice, cfg);
        }
    }
    return out;
}

DenseMatrix reconstruct(const MixedPrecisionWeight& w) {
    DenseMatrix m(w.input_dim, w.output_dim);
    for (std::size_t i = 0; i < w.salient_k; ++i) {
        const std::size_t src = w.permutation[i];
        for (std::size_t c = 0; c < w.output_dim; ++c) {
            m(src, c) = w.salient(i, c);
        }
    }
    const std::size_t ng = w.group_count();
    for (std::size_t g = 0; g < ng; ++g) {
        const std::size_t begin = w.group_begin(g);
        const std::size_t channels = w.group_channels(g);
        for (std::size_t c = 0; c < w.output_dim; ++c) {
            const QuantizedGroup& q = w.groups[g * w.output_dim + c];
            const std::vector<double> vals = dequantize_group(q);
            for (std::size_t i = 0; i < channels; ++i) {
                m(w.permutation[begin + i], c) = vals[i];
            }
        }
    }
    return m;
}

DenseMatrix mixed_matmul(const DenseMatrix& x_rotated, const MixedPrecisionWeight& w) {
    if (x_rotated.cols != w.input_dim) {
        throw validation_error("mixed_matmul: input width does not match weight");
    }
    const std::size_t t_rows = x_rotated.rows;
    const std::size_t d = w.input_dim;
    const std::size_t dprime = w.output_dim;

    // Gather permuted inputs once so every column pass reads contiguously.
    DenseMatrix xp(t_rows, d);
    for (std::size_t t = 0; t < t_rows; ++t) {
        const double* src = x_rotated.data.data() + t * d;
        double* dst = xp.data.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            dst[i] = src[w.permutation[i]];
        }
    }

    DenseMatrix y(t_rows, dprime);
    const std::size_t ng = w.group_count();
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t cc = 0; cc < static_cast<std::int64_t>(dprime); ++cc) {
        const std::size_t c = static_cast<std::size_t>(cc);
        std::vector<double> wcol(d);
        for (std::size_t i = 0; i < w.salient_k; ++i) {
            wcol[i] = w.salient(i, c);
        }
        for (std::size_t g = 0; g < ng; ++g) {
            const std::size_t begin = w.group_begin(g);
            const QuantizedGroup& q = w.groups[g * dprime + c];
            for (std::size_t i = 0; i < q.count; ++i) {
                wcol[begin + i] = dequantize_at(q, i);
            }
        }
        for (std::size_t t = 0; t < t_rows; ++t) {
            const double* xrow = xp.data.data() + t * d;
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                acc += xrow[i] * wcol[i];
            }
            y(t, c) = acc;
        }
    }
    return y;
}

DenseMatrix mixed_forward(const DenseMatrix& x, const EigenDecomposition* rotation,
                          const MixedPrecisionWeight& w) {
    if (rotation) {
        return mixed_matmul(matmul(x, rotation->eigenvectors), w);
    }
    return mixed_matmul(x, w);
}

} // namespace rosaq
