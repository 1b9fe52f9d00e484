#include "evrwkv/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace evr {

void RunConfig::validate() const {
    auto req = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("config: " + what);
    };
    req(base_channels > 0 && base_channels % 4 == 0,
        "base_channels must be a positive multiple of 4 (channel-attention squeeze ratio)");
    req(bins > 0, "bins must be positive");
    req(voxel_norm == "none" || voxel_norm == "max_abs" || voxel_norm == "std_nonzero",
        "voxel_norm must be none|max_abs|std_nonzero, got '" + voxel_norm + "'");
    req(sigma_min > 0 && sigma_max > sigma_min, "need 0 < sigma_min < sigma_max");
    req(gauss_kernel > 0 && gauss_kernel % 2 == 1, "gauss_kernel must be odd and positive");
    req(rewkv_iterations > 0, "rewkv_iterations must be positive");
    req(hidden_ratio > 0, "hidden_ratio must be positive");
    req(wkv_exponent == "vrwkv" || wkv_exponent == "grouped",
        "wkv_exponent must be vrwkv|grouped, got '" + wkv_exponent + "'");
    req(lr >= 0, "lr must be non-negative");
    req(steps >= 0 && steps <= 2000, "steps must lie in [0,2000]");
    req(lambda_rec >= 0 && lambda_percep >= 0 && lambda_ssim >= 0 && lambda_msssim >= 0,
        "loss weights must be non-negative");
    req(lambda_rec + lambda_percep + lambda_ssim + lambda_msssim > 0,
        "at least one loss weight must be positive");
}

CrossRwkvConfig RunConfig::cross_rwkv() const {
    CrossRwkvConfig c;
    c.base_channels = base_channels;
    c.rewkv_iterations = rewkv_iterations;
    c.hidden_ratio = hidden_ratio;
    c.cs_shift_cross = cs_shift_cross;
    c.residual = residual;
    c.use_spatial_mix = use_spatial_mix;
    c.use_channel_mix = use_channel_mix;
    c.exponent = wkv_exponent == "grouped" ? wkv::Exponent::grouped : wkv::Exponent::vrwkv;
    return c;
}

EisfeConfig RunConfig::eisfe() const {
    EisfeConfig c;
    c.sigma_min = sigma_min;
    c.sigma_max = sigma_max;
    c.gauss_K = gauss_kernel;
    c.fft_circular = fft_circular;
    return c;
}

LossWeights RunConfig::loss_weights() const {
    LossWeights w;
    w.rec = lambda_rec;
    w.percep = lambda_percep;
    w.ssim = lambda_ssim;
    w.msssim = use_msssim_loss ? lambda_msssim : 0.0;
    return w;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }
    RunConfig c;
    std::set<std::string> known;
    auto get = [&](const char* key, auto& field) {
        known.insert(key);
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("seed", c.seed);
    get("base_channels", c.base_channels);
    get("bins", c.bins);
    get("voxel_norm", c.voxel_norm);
    get("sigma_min", c.sigma_min);
    get("sigma_max", c.sigma_max);
    get("gauss_kernel", c.gauss_kernel);
    get("fft_circular", c.fft_circular);
    get("rewkv_iterations", c.rewkv_iterations);
    get("hidden_ratio", c.hidden_ratio);
    get("cs_shift_cross", c.cs_shift_cross);
    get("residual", c.residual);
    get("wkv_exponent", c.wkv_exponent);
    get("use_eisfe", c.use_eisfe);
    get("use_spatial_mix", c.use_spatial_mix);
    get("use_channel_mix", c.use_channel_mix);
    get("use_msssim_loss", c.use_msssim_loss);
    get("lr", c.lr);
    get("steps", c.steps);
    get("lambda_rec", c.lambda_rec);
    get("lambda_percep", c.lambda_percep);
    get("lambda_ssim", c.lambda_ssim);
    get("lambda_msssim", c.lambda_msssim);
    get("charbonnier_global", c.charbonnier_global);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

}  // namespace evr
