#include "amsf/config.hpp"

#include <fstream>

#include "amsf/io.hpp"

namespace amsf::config {

using nlohmann::json;

json defaults() { return to_json(RunConfig{}); }

json to_json(const RunConfig& cfg) {
    json j;
    j["data"] = {{"root", cfg.data_root}, {"manifest", cfg.manifest}};
    j["recipe"] = {{"classes", cfg.recipe.classes},
                   {"patients_per_class", cfg.recipe.patients_per_class},
                   {"images_per_patient", cfg.recipe.images_per_patient},
                   {"image_size", cfg.recipe.image_size},
                   {"seed", cfg.recipe.seed},
                   {"variant", cfg.recipe.variant},
                   {"border", cfg.recipe.border}};
    j["preprocess"] = {{"window_level", cfg.preprocess.window_level},
                       {"window_width", cfg.preprocess.window_width},
                       {"crop", cfg.preprocess.crop},
                       {"background_frac", cfg.preprocess.background_frac},
                       {"out_size", cfg.preprocess.out_size}};
    j["model"] = {{"dwt_levels", cfg.model.amff.dwt_levels},
                  {"gate_hidden_width", cfg.model.amff.gate_hidden_width},
                  {"d_model", cfg.model.backbone.d_model},
                  {"depth", cfg.model.backbone.depth},
                  {"heads", cfg.model.backbone.heads},
                  {"patch_size", cfg.model.backbone.patch_size},
                  {"insertion_layer", cfg.model.backbone.insertion_layer},
                  {"dropout_rate", cfg.model.backbone.dropout_rate},
                  {"proj_channels", cfg.model.backbone.proj_channels},
                  {"fusion_mlp_hidden", cfg.model.acasff.fusion_mlp_hidden},
                  {"fuse_cls", cfg.model.acasff.fuse_cls},
                  {"tau_init", cfg.model.similarity.tau_init},
                  {"gamma", cfg.model.similarity.gamma},
                  {"eps", cfg.model.similarity.eps},
                  {"use_amff", cfg.model.use_amff},
                  {"use_acasff", cfg.model.use_acasff},
                  {"head", cfg.model.head},
                  {"seed", cfg.model.init_seed}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"total_episodes", cfg.train.total_episodes},
                  {"milestones", cfg.train.milestones},
                  {"decay_factor", cfg.train.decay_factor},
                  {"warmup_episodes", cfg.train.warmup_episodes},
                  {"n_way", cfg.train.n_way},
                  {"k_shot", cfg.train.k_shot},
                  {"n_query", cfg.train.n_query},
                  {"seed", cfg.train.seed},
                  {"val_interval", cfg.train.val_interval},
                  {"val_episodes", cfg.train.val_episodes},
                  {"augment", cfg.train.augment}};
    j["eval"] = {{"n_way", cfg.eval.n_way},
                 {"k_shot", cfg.eval.k_shot},
                 {"n_query", cfg.eval.n_query},
                 {"episodes_eval", cfg.eval.episodes},
                 {"seed", cfg.eval.seed}};
    j["split"] = {{"split_ratios", cfg.split_ratios}, {"seed", cfg.split_seed}};
    return j;
}

RunConfig from_json(const json& j) {
    RunConfig cfg;
    const json base = to_json(cfg);
    auto get = [&](const char* section, const char* key) -> json {
        if (j.contains(section) && j[section].contains(key)) return j[section][key];
        return base[section][key];
    };
    cfg.data_root = get("data", "root").get<std::string>();
    cfg.manifest = get("data", "manifest").get<std::string>();

    cfg.recipe.classes = get("recipe", "classes");
    cfg.recipe.patients_per_class = get("recipe", "patients_per_class");
    cfg.recipe.images_per_patient = get("recipe", "images_per_patient");
    cfg.recipe.image_size = get("recipe", "image_size");
    cfg.recipe.seed = get("recipe", "seed");
    cfg.recipe.variant = get("recipe", "variant").get<std::string>();
    cfg.recipe.border = get("recipe", "border");

    cfg.preprocess.window_level = get("preprocess", "window_level");
    cfg.preprocess.window_width = get("preprocess", "window_width");
    cfg.preprocess.crop = get("preprocess", "crop");
    cfg.preprocess.background_frac = get("preprocess", "background_frac");
    cfg.preprocess.out_size = get("preprocess", "out_size");

    cfg.model.amff.dwt_levels = get("model", "dwt_levels");
    cfg.model.amff.gate_hidden_width = get("model", "gate_hidden_width");
    cfg.model.backbone.d_model = get("model", "d_model");
    cfg.model.backbone.depth = get("model", "depth");
    cfg.model.backbone.heads = get("model", "heads");
    cfg.model.backbone.patch_size = get("model", "patch_size");
    cfg.model.backbone.insertion_layer = get("model", "insertion_layer");
    cfg.model.backbone.dropout_rate = get("model", "dropout_rate");
    cfg.model.backbone.proj_channels = get("model", "proj_channels");
    cfg.model.backbone.image_size = cfg.preprocess.out_size;
    cfg.model.acasff.fusion_mlp_hidden = get("model", "fusion_mlp_hidden");
    cfg.model.acasff.fuse_cls = get("model", "fuse_cls");
    cfg.model.similarity.tau_init = get("model", "tau_init");
    cfg.model.similarity.gamma = get("model", "gamma");
    cfg.model.similarity.eps = get("model", "eps");
    cfg.model.use_amff = get("model", "use_amff");
    cfg.model.use_acasff = get("model", "use_acasff");
    cfg.model.head = get("model", "head").get<std::string>();
    cfg.model.init_seed = get("model", "seed");

    cfg.train.lr = get("train", "lr");
    cfg.train.weight_decay = get("train", "weight_decay");
    cfg.train.total_episodes = get("train", "total_episodes");
    cfg.train.milestones = get("train", "milestones").get<std::vector<int>>();
    cfg.train.decay_factor = get("train", "decay_factor");
    cfg.train.warmup_episodes = get("train", "warmup_episodes");
    cfg.train.n_way = get("train", "n_way");
    cfg.train.k_shot = get("train", "k_shot");
    cfg.train.n_query = get("train", "n_query");
    cfg.train.seed = get("train", "seed");
    cfg.train.val_interval = get("train", "val_interval");
    cfg.train.val_episodes = get("train", "val_episodes");
    cfg.train.augment = get("train", "augment");

    cfg.eval.n_way = get("eval", "n_way");
    cfg.eval.k_shot = get("eval", "k_shot");
    cfg.eval.n_query = get("eval", "n_query");
    cfg.eval.episodes = get("eval", "episodes_eval");
    cfg.eval.seed = get("eval", "seed");

    cfg.split_ratios = get("split", "split_ratios").get<std::array<int, 3>>();
    cfg.split_seed = get("split", "seed");
    return cfg;
}

json load_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config: " + file.string());
    json user = json::parse(in);
    json merged = defaults();
    merged.merge_patch(user);
    return merged;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must look like section.key=value: " + assignment);
    }
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* cursor = &j;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("bad override path: " + path);
        if (dot == std::string::npos) {
            (*cursor)[key] = value;
            break;
        }
        cursor = &(*cursor)[key];
        start = dot + 1;
    }
}

std::string fingerprint(const json& j) {
    return io::fingerprint(j.dump());
}

}  // namespace amsf::config
