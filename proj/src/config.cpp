#include "ppofilm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace ppofilm::config {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// One configurable key: how to print it and how to set it from text.
struct Entry {
    const char* section;
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Entry make_entry(const char* section, const char* key, T RunConfig::* field) {
    Entry e{section, key, nullptr, nullptr};
    e.get = [field](const RunConfig& c) {
        if constexpr (std::is_same_v<T, std::string>) return c.*field;
        else if constexpr (std::is_same_v<T, double>) return format_double(c.*field);
        else return std::to_string(c.*field);
    };
    e.set = [field, key](RunConfig& c, const std::string& v) {
        try {
            if constexpr (std::is_same_v<T, std::string>) c.*field = v;
            else if constexpr (std::is_same_v<T, double>) c.*field = std::stod(v);
            else if constexpr (std::is_same_v<T, std::uint64_t>) c.*field = std::stoull(v);
            else if constexpr (std::is_same_v<T, long>) c.*field = std::stol(v);
            else c.*field = std::stoi(v);
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string("invalid value for ") + key +
                                        ": '" + v + "'");
        }
    };
    return e;
}

template <typename T>
Entry make_ppo_entry(const char* key, T policy::PpoConfig::* field) {
    Entry e{"ppo", key, nullptr, nullptr};
    e.get = [field](const RunConfig& c) {
        if constexpr (std::is_same_v<T, double>) return format_double(c.ppo.*field);
        else return std::to_string(c.ppo.*field);
    };
    e.set = [field, key](RunConfig& c, const std::string& v) {
        try {
            if constexpr (std::is_same_v<T, double>) c.ppo.*field = std::stod(v);
            else c.ppo.*field = std::stoi(v);
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string("invalid value for ") + key +
                                        ": '" + v + "'");
        }
    };
    return e;
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        make_entry("run", "run_id", &RunConfig::run_id),
        make_entry("run", "out_dir", &RunConfig::out_dir),
        make_entry("run", "seed", &RunConfig::seed),
        make_entry("run", "total_transitions", &RunConfig::total_transitions),
        make_entry("run", "checkpoint_every", &RunConfig::checkpoint_every),
        make_entry("run", "environment", &RunConfig::environment),

        make_entry("collector", "n_env", &RunConfig::n_env),
        make_entry("collector", "n_update", &RunConfig::n_update),
        make_entry("collector", "mode", &RunConfig::mode),

        make_ppo_entry("clip", &policy::PpoConfig::clip),
        make_ppo_entry("entropy_coef", &policy::PpoConfig::entropy_coef),
        make_ppo_entry("gamma", &policy::PpoConfig::gamma),
        make_ppo_entry("gae_lambda", &policy::PpoConfig::gae_lambda),
        make_ppo_entry("epochs", &policy::PpoConfig::epochs),
        make_ppo_entry("minibatch_size", &policy::PpoConfig::minibatch_size),
        make_ppo_entry("lr_actor", &policy::PpoConfig::lr_actor),
        make_ppo_entry("lr_critic", &policy::PpoConfig::lr_critic),
        make_ppo_entry("grad_clip", &policy::PpoConfig::grad_clip),

        make_entry("solver", "delta", &RunConfig::delta),
        make_entry("solver", "dt", &RunConfig::dt),
        make_entry("solver", "eps", &RunConfig::eps),
        make_entry("solver", "dx", &RunConfig::dx),

        make_entry("env", "n_jets", &RunConfig::n_jets),
        make_entry("env", "x0", &RunConfig::x0),
        make_entry("env", "jet_spacing", &RunConfig::jet_spacing),
        make_entry("env", "base_length", &RunConfig::base_length),
        make_entry("env", "jet_width", &RunConfig::jet_width),
        make_entry("env", "amplitude", &RunConfig::amplitude),
        make_entry("env", "l_obs", &RunConfig::l_obs),
        make_entry("env", "l_rwd", &RunConfig::l_rwd),
        make_entry("env", "dt_int", &RunConfig::dt_int),
        make_entry("env", "dt_const", &RunConfig::dt_const),
        make_entry("env", "actions_per_episode", &RunConfig::actions_per_episode),
        make_entry("env", "init_state_dir", &RunConfig::init_state_dir),
    };
    return table;
}

}  // namespace

env::ShkadovEnvConfig RunConfig::shkadov_env_config() const {
    env::ShkadovEnvConfig c;
    c.n_jets = n_jets;
    c.x0 = x0;
    c.jet_spacing = jet_spacing;
    c.base_length = base_length;
    c.jet_width = jet_width;
    c.amplitude = amplitude;
    c.l_obs = l_obs;
    c.l_rwd = l_rwd;
    c.dt_int = dt_int;
    c.dt_const = dt_const;
    c.actions_per_episode = actions_per_episode;
    c.init_state_dir = init_state_dir;
    c.solver.delta = delta;
    c.solver.dt = dt;
    c.solver.eps = eps;
    c.solver.grid.dx = dx;
    return c;
}

int RunConfig::episode_len() const {
    if (environment == "shkadov") return actions_per_episode;
    if (environment == "pendulum") return env::PendulumEnv::kMaxSteps;
    throw std::invalid_argument("unknown environment '" + environment + "'");
}

void RunConfig::validate() const {
    ppo.validate();
    (void)collect_mode();
    (void)episode_len();
    if (n_env < 1 || n_update < 1)
        throw std::invalid_argument("n_env and n_update must be >= 1");
    if (total_transitions < 1)
        throw std::invalid_argument("total_transitions must be >= 1");
    if (checkpoint_every < 0)
        throw std::invalid_argument("checkpoint_every must be >= 0");
    if (environment == "shkadov") {
        auto env_config = shkadov_env_config();
        env_config.init_state_dir.clear();  // presence checked at env creation
        env_config.finalize();
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no += 1;
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw std::invalid_argument("line " + std::to_string(line_no) +
                                            ": malformed section header");
            section = s.substr(1, s.size() - 2);
            bool known = false;
            for (const auto& e : entries())
                if (section == e.section) known = true;
            if (!known)
                throw std::invalid_argument("line " + std::to_string(line_no) +
                                            ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        bool found = false;
        for (const auto& e : entries()) {
            if (section == e.section && key == e.key) {
                e.set(config, value);
                found = true;
                break;
            }
        }
        if (!found)
            throw std::invalid_argument("line " + std::to_string(line_no) +
                                        ": unknown key '" + key + "' in section [" +
                                        section + "]");
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& config) {
    std::string out;
    const char* current_section = "";
    for (const auto& e : entries()) {
        if (std::string_view(current_section) != e.section) {
            if (!out.empty()) out += '\n';
            out += '[';
            out += e.section;
            out += "]\n";
            current_section = e.section;
        }
        out += e.key;
        out += " = ";
        out += e.get(config);
        out += '\n';
    }
    return out;
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << serialize_config(config);
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace ppofilm::config
