#include "fedlppa/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedlppa {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        return s.substr(1, s.size() - 2);
    return s;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream ss(v);
    T out{};
    ss >> out;
    if (ss.fail()) throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    std::string rest;
    ss >> rest;
    if (!rest.empty()) throw std::invalid_argument("config: trailing junk for " + key + ": '" + v + "'");
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_flat_toml(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            // keep '#' inside quotes
            bool inq = false;
            size_t cut = std::string::npos;
            for (size_t i = 0; i < line.size(); ++i) {
                if (line[i] == '"') inq = !inq;
                else if (line[i] == '#' && !inq) { cut = i; break; }
            }
            if (cut != std::string::npos) line = line.substr(0, cut);
        }
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[')
            throw std::invalid_argument("config: sections are not supported (line " +
                                        std::to_string(ln) + ")");
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value (line " +
                                        std::to_string(ln) + ")");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("config: empty key or value (line " +
                                        std::to_string(ln) + ")");
        if (val.front() == '"' && (val.size() < 2 || val.back() != '"'))
            throw std::invalid_argument("config: unterminated string (line " +
                                        std::to_string(ln) + ")");
        kv[key] = val;
    }
    return kv;
}

void apply_overrides(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, raw] : kv) {
        const std::string v = unquote(raw);
        if (key == "seed") cfg.seed = parse_num<uint64_t>(v, key);
        else if (key == "sites") cfg.sites = v;
        else if (key == "method") cfg.method = method_from_string(v);
        else if (key == "strategy") cfg.strategy = strategy_from_string(v);
        else if (key == "rounds") cfg.rounds = parse_num<int>(v, key);
        else if (key == "local_iters") cfg.local_iters = parse_num<int>(v, key);
        else if (key == "batch") cfg.batch = parse_num<int>(v, key);
        else if (key == "base_lr") cfg.base_lr = parse_num<float>(v, key);
        else if (key == "lambda") cfg.lambda = parse_num<float>(v, key);
        else if (key == "tdf_on") cfg.tdf_on = parse_bool(v, key);
        else if (key == "pd_on") cfg.pd_on = parse_bool(v, key);
        else if (key == "la_on") cfg.la_on = parse_bool(v, key);
        else if (key == "eval_every") cfg.eval_every = parse_num<int>(v, key);
        else if (key == "base_channels") cfg.base_channels = parse_num<int>(v, key);
        else if (key == "depth") cfg.depth = parse_num<int>(v, key);
        else if (key == "n_train") cfg.n_train = parse_num<int>(v, key);
        else if (key == "n_test") cfg.n_test = parse_num<int>(v, key);
        else if (key == "image_size") cfg.image_size = parse_num<int>(v, key);
        else if (key == "workers") cfg.workers = parse_num<int>(v, key);
        else if (key == "dataset_dir") cfg.dataset_dir = v;
        else if (key == "output_dir") cfg.output_dir = v;
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw std::invalid_argument("config: cannot open " + file.string());
    std::stringstream buf;
    buf << f.rdbuf();
    ExperimentConfig cfg;
    apply_overrides(cfg, parse_flat_toml(buf.str()));
    return cfg;
}

void ExperimentConfig::validate() const {
    if (rounds < 0) throw std::invalid_argument("config: rounds must be >= 0");
    if (local_iters < 0) throw std::invalid_argument("config: local_iters must be >= 0");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (base_lr <= 0.0f) throw std::invalid_argument("config: base_lr must be > 0");
    if (lambda < 0.0f) throw std::invalid_argument("config: lambda must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    if (base_channels < 1 || depth < 1)
        throw std::invalid_argument("config: bad model size");
    if (image_size % (1 << depth) != 0)
        throw std::invalid_argument("config: image_size must be divisible by 2^depth");
    if (workers != 1) throw std::invalid_argument("config: only workers = 1 is supported");
    if (pd_on && !tdf_on)
        throw std::invalid_argument("config: pd_on requires tdf_on");
    if (sites != "default4")
        throw std::invalid_argument("config: unknown site roster '" + sites + "'");
}

RunConfig ExperimentConfig::to_run_config() const {
    RunConfig rc;
    rc.seed = seed;
    rc.method = method;
    rc.strategy = strategy;
    rc.rounds = rounds;
    rc.local_iters = local_iters;
    rc.batch = batch;
    rc.base_lr = base_lr;
    rc.tdf_on = tdf_on;
    rc.pd_on = pd_on;
    rc.la_on = la_on;
    rc.eval_every = eval_every;
    rc.base_channels = base_channels;
    rc.depth = depth;
    rc.loss.lambda = lambda;
    rc.dataset_dir = dataset_dir;
    return rc;
}

std::string ExperimentConfig::to_toml() const {
    std::ostringstream o;
    o << "seed = " << seed << "\n";
    o << "sites = \"" << sites << "\"\n";
    o << "method = \"" << to_string(method) << "\"\n";
    o << "strategy = \"" << to_string(strategy) << "\"\n";
    o << "rounds = " << rounds << "\n";
    o << "local_iters = " << local_iters << "\n";
    o << "batch = " << batch << "\n";
    o << "base_lr = " << base_lr << "\n";
    o << "lambda = " << lambda << "\n";
    o << "tdf_on = " << (tdf_on ? "true" : "false") << "\n";
    o << "pd_on = " << (pd_on ? "true" : "false") << "\n";
    o << "la_on = " << (la_on ? "true" : "false") << "\n";
    o << "eval_every = " << eval_every << "\n";
    o << "base_channels = " << base_channels << "\n";
    o << "depth = " << depth << "\n";
    o << "n_train = " << n_train << "\n";
    o << "n_test = " << n_test << "\n";
    o << "image_size = " << image_size << "\n";
    o << "workers = " << workers << "\n";
    o << "dataset_dir = \"" << dataset_dir.string() << "\"\n";
    o << "output_dir = \"" << output_dir.string() << "\"\n";
    return o.str();
}

std::vector<SiteSpec> site_specs_for(const ExperimentConfig& cfg) {
    auto specs = default_4site_config();
    for (auto& s : specs) {
        s.n_train = cfg.n_train;
        s.n_test = cfg.n_test;
        s.height = s.width = cfg.image_size;
    }
    return specs;
}

}  // namespace fedlppa
