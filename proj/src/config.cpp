#include "cseg/config.hpp"

#include <charconv>
#include <limits>
#include <map>
#include <regex>
#include <sstream>

#include "cseg/error.hpp"

namespace cseg {

namespace {

int parse_int(const std::string& s, const std::string& what) {
    int v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("invalid integer for " + what + ": '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("invalid boolean for " + what + ": '" + s + "'");
}

}  // namespace

int UNetConfig::base_filters() const { return max_filters >> depth; }

int UNetConfig::stage_width(int stage) const { return base_filters() << stage; }

std::vector<int> UNetConfig::encoder_widths() const {
    std::vector<int> w;
    for (int i = 0; i < depth; ++i) w.push_back(stage_width(i));
    return w;
}

std::string UNetConfig::name() const {
    std::string n = "Unet" + std::to_string(input_size) + "X" + std::to_string(max_filters) + "X" +
                    std::to_string(depth);
    if (use_se) n += "-SE";
    if (use_residual) n += "-RES";
    return n;
}

void UNetConfig::validate() const {
    if (depth < 1) throw ConfigError("depth N must be >= 1");
    if (depth > 16) throw ConfigError("depth N must be <= 16");
    const long long scale = 1LL << depth;
    if (input_size < 1 || input_size % scale != 0) {
        throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by 2^" +
                          std::to_string(depth));
    }
    if (max_filters < scale || max_filters % scale != 0) {
        throw ConfigError("max filters " + std::to_string(max_filters) + " is not a positive multiple of 2^" +
                          std::to_string(depth));
    }
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (se_ratio < 1) throw ConfigError("se_ratio must be >= 1");
}

std::string UNetConfig::to_text() const {
    std::ostringstream os;
    os << "input_size=" << input_size << '\n'
       << "max_filters=" << max_filters << '\n'
       << "depth=" << depth << '\n'
       << "use_se=" << (use_se ? "true" : "false") << '\n'
       << "use_residual=" << (use_residual ? "true" : "false") << '\n'
       << "in_channels=" << in_channels << '\n'
       << "se_ratio=" << se_ratio << '\n'
       << "batchnorm=" << (batchnorm ? "true" : "false") << '\n';
    return os.str();
}

UNetConfig parse_config_name(const std::string& name) {
    static const std::regex grammar(R"(^Unet([0-9]{1,6})X([0-9]{1,7})X([0-9]{1,2})(-SE)?$)");
    std::smatch m;
    if (!std::regex_match(name, m, grammar)) {
        throw ConfigError("architecture name '" + name + "' does not match Unet{IS}X{MF}X{N}[-SE]");
    }
    UNetConfig c;
    c.input_size = parse_int(m[1].str(), "IS");
    c.max_filters = parse_int(m[2].str(), "MF");
    c.depth = parse_int(m[3].str(), "N");
    c.use_se = m[4].matched;
    c.validate();
    return c;
}

UNetConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    UNetConfig c;
    auto take = [&](const char* key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("config text missing key ") + key);
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    c.input_size = parse_int(take("input_size"), "input_size");
    c.max_filters = parse_int(take("max_filters"), "max_filters");
    c.depth = parse_int(take("depth"), "depth");
    c.use_se = parse_bool(take("use_se"), "use_se");
    c.use_residual = parse_bool(take("use_residual"), "use_residual");
    c.in_channels = parse_int(take("in_channels"), "in_channels");
    c.se_ratio = parse_int(take("se_ratio"), "se_ratio");
    c.batchnorm = parse_bool(take("batchnorm"), "batchnorm");
    if (!kv.empty()) throw FormatError("config text has unknown key " + kv.begin()->first);
    c.validate();
    return c;
}

const std::vector<std::string>& results_table_names() {
    static const std::vector<std::string> names = {
        "Unet96X2048X4",    "Unet96X1024X4",    "Unet96X512X4",   "Unet96X256X4",   "Unet192X1024X5",
        "Unet96X1024X5",    "Unet48X1024X4",    "Unet96X1024X4-SE", "Unet96X512X4-SE", "Unet96X256X4-SE",
    };
    return names;
}

}  // namespace cseg
