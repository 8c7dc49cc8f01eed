#include "rosaq/plan.hpp"

#include "rosaq/errors.hpp"

namespace rosaq {

void BlockConfig::validate() const {
    if (d == 0 || heads == 0 || d_ff == 0) throw validation_error("block config: zero dimension");
    if (d % heads != 0) throw validation_error("block config: d must be divisible by heads");
    if (head_dim() % 32 != 0) throw validation_error("block config: head width must be a multiple of 32");
    if (d_ff % 32 != 0) throw validation_error("block config: d_ff must be a multiple of 32");
    if (!(eps > 0.0)) throw validation_error("block config: eps must be positive");
}

const char* weight_class_name(WeightClass c) {
    switch (c) {
        case WeightClass::WQ: return "wq";
        case WeightClass::WK: return "wk";
        case WeightClass::WV: return "wv";
        case WeightClass::WO: return "wo";
        case WeightClass::WU: return "wu";
        case WeightClass::WG: return "wg";
        case WeightClass::WD: return "wd";
    }
    return "wq";
}

WeightClass weight_class_from_name(const std::string& name) {
    for (int i = 0; i < static_cast<int>(kWeightClassCount); ++i) {
        if (name == weight_class_name(static_cast<WeightClass>(i))) {
            return static_cast<WeightClass>(i);
        }
    }
    throw validation_error("unknown weight class \"" + name + "\"");
}

const char* rotation_mode_name(RotationMode m) {
    switch (m) {
        case RotationMode::PerLayerPCA: return "per_layer_pca";
        case RotationMode::HeadWisePCA: return "head_wise_pca";
        case RotationMode::GlobalPCA: return "global_pca";
        case RotationMode::AwqScale: return "awq_scale";
        case RotationMode::None: return "none";
        case RotationMode::Passthrough: return "passthrough";
    }
    return "per_layer_pca";
}

RotationMode rotation_mode_from_name(const std::string& name) {
    if (name == "per_layer_pca") return RotationMode::PerLayerPCA;
    if (name == "head_wise_pca") return RotationMode::HeadWisePCA;
    if (name == "global_pca") return RotationMode::GlobalPCA;
    if (name == "awq_scale") return RotationMode::AwqScale;
    if (name == "none") return RotationMode::None;
    if (name == "passthrough") return RotationMode::Passthrough;
    throw validation_error("unknown rotation mode \"" + name + "\"");
}

std::size_t default_salient_budget(std::size_t dim) {
    return 32 * std::max<std::size_t>(1, dim / 1024);
}

LayerQuantPlan LayerQuantPlan::default_plan(const BlockConfig& cfg, int bits,
                                            std::size_t group_size) {
    LayerQuantPlan p;
    const std::size_t k_layer = default_salient_budget(cfg.d);
    const std::size_t k_head = default_salient_budget(cfg.head_dim());
    for (auto& e : p.entries) {
        e.bits = bits;
        e.group_size = group_size;
        e.selection = SelectionMode::Top;
    }
    p[WeightClass::WQ] = {RotationMode::PerLayerPCA, SelectionMode::Top, k_layer, bits, group_size};
    p[WeightClass::WK] = {RotationMode::PerLayerPCA, SelectionMode::Top, k_layer, bits, group_size};
    p[WeightClass::WV] = {RotationMode::PerLayerPCA, SelectionMode::Top, k_layer, bits, group_size};
    p[WeightClass::WO] = {RotationMode::HeadWisePCA, SelectionMode::Top, k_head, bits, group_size};
    p[WeightClass::WU] = {RotationMode::PerLayerPCA, SelectionMode::Top, k_layer, bits, group_size};
    p[WeightClass::WG] = {RotationMode::PerLayerPCA, SelectionMode::Top, k_layer, bits, group_size};
    p[WeightClass::WD] = {RotationMode::AwqScale, SelectionMode::Top, 0, bits, group_size, 0.5, false};
    return p;
}

LayerQuantPlan LayerQuantPlan::identity_q_plan(const BlockConfig& cfg) {
    LayerQuantPlan p = default_plan(cfg);
    p[WeightClass::WQ].salient = cfg.d;
    p[WeightClass::WK].salient = cfg.d;
    p[WeightClass::WV].salient = cfg.d;
    p[WeightClass::WO].salient = cfg.head_dim();
    p[WeightClass::WU].salient = cfg.d;
    p[WeightClass::WG].salient = cfg.d;
    // W_D keeps its scaling so the scaled-then-unscaled path is exercised
    // with quantization disabled by the full salient budget.
    p[WeightClass::WD].salient = cfg.d_ff;
    return p;
}

LayerQuantPlan LayerQuantPlan::all_salient_no_rotation(const BlockConfig& cfg) {
    LayerQuantPlan p = identity_q_plan(cfg);
    for (auto& e : p.entries) e.rotation = RotationMode::None;
    p[WeightClass::WO].salient = cfg.d; // single unrotated matrix over concat heads
    return p;
}

LayerQuantPlan LayerQuantPlan::rtn_only(const BlockConfig& cfg, int bits, std::size_t group_size) {
    LayerQuantPlan p = default_plan(cfg, bits, group_size);
    for (auto& e : p.entries) {
        e.rotation = RotationMode::None;
        e.salient = 0;
    }
    return p;
}

LayerQuantPlan LayerQuantPlan::passthrough() {
    LayerQuantPlan p;
    for (auto& e : p.entries) e.rotation = RotationMode::Passthrough;
    return p;
}

void LayerQuantPlan::validate(const BlockConfig& cfg) const {
    cfg.validate();
    for (int i = 0; i < static_cast<int>(kWeightClassCount); ++i) {
        const auto wc = static_cast<WeightClass>(i);
        const PlanEntry& e = entries[i];
        if (e.rotation == RotationMode::Passthrough) continue;
        if (e.bits < 2 || e.bits > 8) {
            throw validation_error(std::string("plan: bits out of range for ") + weight_class_name(wc));
        }
        if (e.group_size == 0 || e.group_size % 32 != 0) {
            throw validation_error(std::string("plan: group size must be a multiple of 32 for ") +
                                   weight_class_name(wc));
        }
        if (e.salient % 32 != 0) {
            throw validation_error(std::string("plan: salient budget must be a multiple of 32 for ") +
                                   weight_class_name(wc));
        }
        const bool head_scoped =
            wc == WeightClass::WO && e.rotation == RotationMode::HeadWisePCA;
        const std::size_t dim = wc == WeightClass::WD  ? cfg.d_ff
                                : head_scoped          ? cfg.head_dim()
                                                       : cfg.d;
        const std::size_t budget =
            (wc == WeightClass::WO && e.rotation == RotationMode::GlobalPCA) ? e.salient * cfg.heads
                                                                             : e.salient;
        if (budget > dim) {
            throw validation_error(std::string("plan: salient budget exceeds width for ") +
                                   weight_class_name(wc));
        }
        if ((e.rotation == RotationMode::HeadWisePCA || e.rotation == RotationMode::GlobalPCA) &&
            wc != WeightClass::WO) {
            throw validation_error(std::string("plan: head-scoped rotation only applies to wo, got ") +
                                   weight_class_name(wc));
        }
        if (e.rotation == RotationMode::AwqScale && wc != WeightClass::WD) {
            throw validation_error("plan: awq_scale only applies to wd");
        }
        if (e.rotation == RotationMode::AwqScale && (e.awq_alpha < 0.0 || e.awq_alpha > 1.0)) {
            throw validation_error("plan: awq alpha out of [0,1]");
        }
    }
}

namespace {

PlanEntry entry_from_json(const nlohmann::json& j, const PlanEntry& base) {
    PlanEntry e = base;
    if (j.contains("rotation")) e.rotation = rotation_mode_from_name(j.at("rotation").get<std::string>());
    if (j.contains("selection")) e.selection = selection_mode_from_name(j.at("selection").get<std::string>());
    if (j.contains("salient")) e.salient = j.at("salient").get<std::size_t>();
    if (j.contains("bits")) e.bits = j.at("bits").get<int>();
    if (j.contains("group_size")) e.group_size = j.at("group_size").get<std::size_t>();
    if (j.contains("awq_alpha")) e.awq_alpha = j.at("awq_alpha").get<double>();
    if (j.contains("awq_grid")) e.awq_grid = j.at("awq_grid").get<bool>();
    return e;
}

nlohmann::json entry_to_json(const PlanEntry& e) {
    nlohmann::json j;
    j["rotation"] = rotation_mode_name(e.rotation);
    j["selection"] = selection_mode_name(e.selection);
    j["salient"] = e.salient;
    j["bits"] = e.bits;
    j["group_size"] = e.group_size;
    if (e.rotation == RotationMode::AwqScale) {
        j["awq_alpha"] = e.awq_alpha;
        j["awq_grid"] = e.awq_grid;
    }
    return j;
}

} // namespace

nlohmann::json LayerQuantPlan::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    nlohmann::json w;
    for (int i = 0; i < static_cast<int>(kWeightClassCount); ++i) {
        w[weight_class_name(static_cast<WeightClass>(i))] = entry_to_json(entries[i]);
    }
    j["weights"] = std::move(w);
    return j;
}

LayerQuantPlan LayerQuantPlan::from_json(const nlohmann::json& j) {
    LayerQuantPlan p;
    PlanEntry base;
    if (j.contains("bits")) base.bits = j.at("bits").get<int>();
    if (j.contains("group_size")) base.group_size = j.at("group_size").get<std::size_t>();
    if (j.contains("selection")) base.selection = selection_mode_from_name(j.at("selection").get<std::string>());
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    for (auto& e : p.entries) e = base;
    p[WeightClass::WO].rotation = RotationMode::HeadWisePCA;
    p[WeightClass::WD].rotation = RotationMode::AwqScale;
    p[WeightClass::WD].salient = 0;
    if (j.contains("weights")) {
        for (const auto& [name, ej] : j.at("weights").items()) {
            const WeightClass wc = weight_class_from_name(name);
            p[wc] = entry_from_json(ej, p[wc]);
        }
    }
    return p;
}

} // namespace rosaq
