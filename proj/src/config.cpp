#include "crac/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace crac {

namespace {

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const unsigned long long u = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' expects an unsigned integer, got '" +
                                    v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' expects true|false, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

bool is_known_loss(const std::string& loss) {
    return loss == "ce" || loss == "fl" || loss == "ls" || loss == "ecp" || loss == "mbls" ||
           loss == "nacl" || loss == "crac-fixed" || loss == "crac";
}

void TrainConfig::validate() const {
    if (data_path.empty()) throw std::invalid_argument("config: 'data' is required");
    if (!is_known_loss(loss)) throw std::invalid_argument("config: unknown loss '" + loss + "'");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (lr_first <= 0.0 || lr_second <= 0.0)
        throw std::invalid_argument("config: learning rates must be positive");
    if (fl_gamma < 0.0) throw std::invalid_argument("config: fl_gamma must be >= 0");
    if (ls_alpha < 0.0 || ls_alpha >= 1.0)
        throw std::invalid_argument("config: ls_alpha must be in [0, 1)");
    if (ecp_lambda < 0.0 || mbls_lambda < 0.0 || nacl_lambda < 0.0)
        throw std::invalid_argument("config: loss weights must be >= 0");
    if (mbls_margin < 0.0) throw std::invalid_argument("config: mbls_margin must be >= 0");
    if (crac_fixed_lambda_inner < 0.0 || crac_fixed_lambda_outer < 0.0)
        throw std::invalid_argument("config: crac-fixed weights must be >= 0");
    if (constraint.patch_size % 2 == 0)
        throw std::invalid_argument("config: prior_patch must be odd");
    sched.validate();
}

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));

        if (key == "data") c.data_path = val;
        else if (key == "out") c.out_dir = val;
        else if (key == "loss") c.loss = val;
        else if (key == "epochs") c.epochs = static_cast<std::size_t>(to_u64(val, key));
        else if (key == "batch_size") c.batch_size = static_cast<std::size_t>(to_u64(val, key));
        else if (key == "lr_first") c.lr_first = to_double(val, key);
        else if (key == "lr_second") c.lr_second = to_double(val, key);
        else if (key == "seed") c.seed = to_u64(val, key);
        else if (key == "fl_gamma") c.fl_gamma = to_double(val, key);
        else if (key == "ls_alpha") c.ls_alpha = to_double(val, key);
        else if (key == "ecp_lambda") c.ecp_lambda = to_double(val, key);
        else if (key == "mbls_lambda") c.mbls_lambda = to_double(val, key);
        else if (key == "mbls_margin") c.mbls_margin = to_double(val, key);
        else if (key == "nacl_lambda") c.nacl_lambda = to_double(val, key);
        else if (key == "crac_fixed_lambda_inner") c.crac_fixed_lambda_inner = to_double(val, key);
        else if (key == "crac_fixed_lambda_outer") c.crac_fixed_lambda_outer = to_double(val, key);
        else if (key == "alm_lambda0") c.sched.lambda_init = to_double(val, key);
        else if (key == "alm_rho0") c.sched.rho_init = to_double(val, key);
        else if (key == "alm_gamma") c.sched.gamma = to_double(val, key);
        else if (key == "alm_mu") c.sched.mu = to_double(val, key);
        else if (key == "alm_lambda_min") c.sched.lambda_min = to_double(val, key);
        else if (key == "alm_lambda_max") c.sched.lambda_max = to_double(val, key);
        else if (key == "prior_patch") c.constraint.patch_size = static_cast<std::size_t>(to_u64(val, key));
        else if (key == "prior_normalize") c.constraint.normalize_prior = to_bool(val, key);
        else if (key == "signed_violation") c.constraint.signed_violation = to_bool(val, key);
        else if (key == "checkpoint_every") c.checkpoint_every = static_cast<std::size_t>(to_u64(val, key));
        else if (key == "resume") c.resume = val;
        else
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_train_config_text(ss.str(), path);
}

void write_train_config(const TrainConfig& c, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "data = " << c.data_path << "\n";
    os << "out = " << c.out_dir << "\n";
    os << "loss = " << c.loss << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "lr_first = " << fmt(c.lr_first) << "\n";
    os << "lr_second = " << fmt(c.lr_second) << "\n";
    os << "seed = " << c.seed << "\n";
    os << "fl_gamma = " << fmt(c.fl_gamma) << "\n";
    os << "ls_alpha = " << fmt(c.ls_alpha) << "\n";
    os << "ecp_lambda = " << fmt(c.ecp_lambda) << "\n";
    os << "mbls_lambda = " << fmt(c.mbls_lambda) << "\n";
    os << "mbls_margin = " << fmt(c.mbls_margin) << "\n";
    os << "nacl_lambda = " << fmt(c.nacl_lambda) << "\n";
    os << "crac_fixed_lambda_inner = " << fmt(c.crac_fixed_lambda_inner) << "\n";
    os << "crac_fixed_lambda_outer = " << fmt(c.crac_fixed_lambda_outer) << "\n";
    os << "alm_lambda0 = " << fmt(c.sched.lambda_init) << "\n";
    os << "alm_rho0 = " << fmt(c.sched.rho_init) << "\n";
    os << "alm_gamma = " << fmt(c.sched.gamma) << "\n";
    os << "alm_mu = " << fmt(c.sched.mu) << "\n";
    os << "alm_lambda_min = " << fmt(c.sched.lambda_min) << "\n";
    os << "alm_lambda_max = " << fmt(c.sched.lambda_max) << "\n";
    os << "prior_patch = " << c.constraint.patch_size << "\n";
    os << "prior_normalize = " << (c.constraint.normalize_prior ? "true" : "false") << "\n";
    os << "signed_violation = " << (c.constraint.signed_violation ? "true" : "false") << "\n";
    os << "checkpoint_every = " << c.checkpoint_every << "\n";
    if (!c.resume.empty()) os << "resume = " << c.resume << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace crac
