#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "anchoring.hpp"
#include "deform.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "scenes.hpp"

namespace dgm
{
    /**
     * Everything a reconstruction run needs. Files use a flat subset of
     * TOML: `key = value` lines, `#` comments, quoted strings, integers,
     * floats and booleans. Unknown or repeated keys are errors.
     */
    struct PipelineConfig
    {
        // input
        std::string scene = "sphere_to_torus";  // a scene shape, or "ply" to read input_dir
        std::string input_dir;
        int frames = 5;
        int points = 2000;
        int gt_resolution = 64;
        // reconstruction grid
        int resolution = 32;
        double sigma = 2.0;
        double iso = 0.0;
        // anchoring
        double anchor_radius = 0.0;  // 0: anchor_radius_factor × mean edge length
        double anchor_radius_factor = 1.0;
        int anchor_interval = 100;
        std::string matching_mode = "radius";
        // deformation
        std::string deform_kind = "control_lattice";
        double deform_init_scale = 0.0;  // std of random initial coefficients
        bool freeze_deformation = false;  // keep the models at their initial value
        // loss weights
        double w_fit = 1e4;
        double w_anchor = 1.0;
        double w_cycle = 1.0;
        double lap_ratio = 1000.0;
        // optimization
        int steps = 200;  // per frame
        double step_size = 1e-3;
        int gaussians = 0;  // 0: one per frame-0 sample
        // evaluation
        int metric_samples = 1024;
        std::string emd_mode = "exact";
        std::uint64_t seed = 1;
        int threads = 1;
        std::string output_dir = "out";

        bool operator==(const PipelineConfig &) const = default;

        void validate() const;
    };

    inline MatchingMode parse_matching_mode(std::string_view s)
    {
        if (s == "radius")
            return MatchingMode::radius;
        if (s == "nearest")
            return MatchingMode::nearest;
        throw Error(ErrorKind::ConfigError, "matching_mode must be \"radius\" or \"nearest\"");
    }

    inline EmdMode parse_emd_mode(std::string_view s)
    {
        if (s == "exact")
            return EmdMode::exact;
        if (s == "entropic")
            return EmdMode::entropic;
        throw Error(ErrorKind::ConfigError, "emd_mode must be \"exact\" or \"entropic\"");
    }

    inline void PipelineConfig::validate() const
    {
        auto fail = [](const std::string & why) { return Error(ErrorKind::ConfigError, why); };
        if (scene == "ply")
        {
            if (input_dir.empty())
                throw fail("scene \"ply\" needs input_dir");
        }
        else
        {
            try
            {
                parse_scene_shape(scene);
            }
            catch (const Error &)
            {
                throw fail("unknown scene \"" + scene + "\"");
            }
        }
        if (frames < 1)
            throw fail("frames must be at least 1");
        if (points < 100)
            throw fail("points must be at least 100");
        if (gt_resolution < 8)
            throw fail("gt_resolution must be at least 8");
        if (resolution < 8 || (resolution & (resolution - 1)) != 0)
            throw fail("resolution must be a power of two, at least 8");
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw fail("sigma must be positive");
        if (!std::isfinite(iso))
            throw fail("iso must be finite");
        if (!(anchor_radius >= 0.0) || !std::isfinite(anchor_radius))
            throw fail("anchor_radius must be non-negative");
        if (!(anchor_radius_factor > 0.0) || !std::isfinite(anchor_radius_factor))
            throw fail("anchor_radius_factor must be positive");
        if (anchor_interval < 1)
            throw fail("anchor_interval must be at least 1");
        parse_matching_mode(matching_mode);
        try
        {
            parse_deform_kind(deform_kind);
        }
        catch (const Error &)
        {
            throw fail("unknown deform_kind \"" + deform_kind + "\"");
        }
        if (!(deform_init_scale >= 0.0) || !std::isfinite(deform_init_scale))
            throw fail("deform_init_scale must be non-negative");
        for (double w : {w_fit, w_anchor, w_cycle, lap_ratio})
            if (!(w >= 0.0) || !std::isfinite(w))
                throw fail("loss weights must be non-negative");
        if (steps < 1)
            throw fail("steps must be at least 1");
        if (!(step_size > 0.0) || !std::isfinite(step_size))
            throw fail("step_size must be positive");
        if (gaussians < 0)
            throw fail("gaussians must be non-negative");
        if (metric_samples < 1)
            throw fail("metric_samples must be positive");
        const auto mode = parse_emd_mode(emd_mode);
        if (mode == EmdMode::exact && static_cast<std::size_t>(metric_samples) > emd_exact_limit)
            throw fail("exact emd supports at most 1024 metric samples");
        if (seed > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            throw fail("seed must fit in a signed 64-bit integer");
        if (threads < 1)
            throw fail("threads must be at least 1");
        if (output_dir.empty())
            throw fail("output_dir must not be empty");
    }

    namespace detail
    {
        using ConfigValue = std::variant<std::int64_t, double, bool, std::string>;

        enum class ConfigType
        {
            integer,
            real,
            boolean,
            text,
        };

        struct ConfigField
        {
            std::string_view key;
            ConfigType type;
            std::function<void(PipelineConfig &, const ConfigValue &)> set;
            std::function<ConfigValue(const PipelineConfig &)> get;
        };

        template <class T>
        ConfigField int_field(std::string_view key, T PipelineConfig::*m)
        {
            return {key, ConfigType::integer,
                    [m](PipelineConfig & c, const ConfigValue & v) {
                        const auto x = std::get<std::int64_t>(v);
                        if (x < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
                            (x > 0 && static_cast<std::uint64_t>(x) > static_cast<std::uint64_t>(std::numeric_limits<T>::max())))
                            throw Error(ErrorKind::ConfigError, "integer out of range");
                        c.*m = static_cast<T>(x);
                    },
                    [m](const PipelineConfig & c) { return ConfigValue(static_cast<std::int64_t>(c.*m)); }};
        }

        inline ConfigField real_field(std::string_view key, double PipelineConfig::*m)
        {
            return {key, ConfigType::real,
                    [m](PipelineConfig & c, const ConfigValue & v) {
                        c.*m = std::holds_alternative<double>(v) ? std::get<double>(v)
                                                                 : static_cast<double>(std::get<std::int64_t>(v));
                    },
                    [m](const PipelineConfig & c) { return ConfigValue(c.*m); }};
        }

        inline ConfigField bool_field(std::string_view key, bool PipelineConfig::*m)
        {
            return {key, ConfigType::boolean, [m](PipelineConfig & c, const ConfigValue & v) { c.*m = std::get<bool>(v); },
                    [m](const PipelineConfig & c) { return ConfigValue(c.*m); }};
        }

        inline ConfigField text_field(std::string_view key, std::string PipelineConfig::*m)
        {
            return {key, ConfigType::text, [m](PipelineConfig & c, const ConfigValue & v) { c.*m = std::get<std::string>(v); },
                    [m](const PipelineConfig & c) { return ConfigValue(c.*m); }};
        }

        inline const std::vector<ConfigField> & config_schema()
        {
            static const std::vector<ConfigField> schema = {
                text_field("scene", &PipelineConfig::scene),
                text_field("input_dir", &PipelineConfig::input_dir),
                int_field("frames", &PipelineConfig::frames),
                int_field("points", &PipelineConfig::points),
                int_field("gt_resolution", &PipelineConfig::gt_resolution),
                int_field("resolution", &PipelineConfig::resolution),
                real_field("sigma", &PipelineConfig::sigma),
                real_field("iso", &PipelineConfig::iso),
                real_field("anchor_radius", &PipelineConfig::anchor_radius),
                real_field("anchor_radius_factor", &PipelineConfig::anchor_radius_factor),
                int_field("anchor_interval", &PipelineConfig::anchor_interval),
                text_field("matching_mode", &PipelineConfig::matching_mode),
                text_field("deform_kind", &PipelineConfig::deform_kind),
                real_field("deform_init_scale", &PipelineConfig::deform_init_scale),
                bool_field("freeze_deformation", &PipelineConfig::freeze_deformation),
                real_field("w_fit", &PipelineConfig::w_fit),
                real_field("w_anchor", &PipelineConfig::w_anchor),
                real_field("w_cycle", &PipelineConfig::w_cycle),
                real_field("lap_ratio", &PipelineConfig::lap_ratio),
                int_field("steps", &PipelineConfig::steps),
                real_field("step_size", &PipelineConfig::step_size),
                int_field("gaussians", &PipelineConfig::gaussians),
                int_field("metric_samples", &PipelineConfig::metric_samples),
                text_field("emd_mode", &PipelineConfig::emd_mode),
                int_field("seed", &PipelineConfig::seed),
                int_field("threads", &PipelineConfig::threads),
                text_field("output_dir", &PipelineConfig::output_dir),
            };
            return schema;
        }

        inline std::string_view trim(std::string_view s)
        {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
                s.remove_prefix(1);
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
                s.remove_suffix(1);
            return s;
        }

        inline bool is_bare_key_char(char c)
        {
            return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
        }

        /// Parses the value text starting at `s`; returns the remainder.
        inline std::string_view parse_config_value(std::string_view s, ConfigValue & out, const std::function<Error(std::string)> & bad)
        {
            if (s.empty())
                throw bad("missing value");
            if (s.front() == '"')
            {
                std::string text;
                std::size_t i = 1;
                for (; i < s.size() && s[i] != '"'; ++i)
                {
                    if (s[i] != '\\')
                    {
                        text += s[i];
                        continue;
                    }
                    if (++i == s.size())
                        break;
                    switch (s[i])
                    {
                        case '"': text += '"'; break;
                        case '\\': text += '\\'; break;
                        case 'n': text += '\n'; break;
                        case 't': text += '\t'; break;
                        default: throw bad("unsupported escape sequence");
                    }
                }
                if (i >= s.size())
                    throw bad("unterminated string");
                out = std::move(text);
                return s.substr(i + 1);
            }
            std::size_t end = 0;
            while (end < s.size() && s[end] != ' ' && s[end] != '\t' && s[end] != '#' && s[end] != '\r')
                ++end;
            const std::string_view tok = s.substr(0, end);
            if (tok == "true" || tok == "false")
            {
                out = tok == "true";
                return s.substr(end);
            }
            std::string digits;
            for (char c : tok)
                if (c != '_')
                    digits += c;
            if (!digits.empty() && digits.front() == '+')
                digits.erase(0, 1);
            const char * b = digits.data();
            const char * e = b + digits.size();
            const bool looks_real = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "-inf" ||
                                    digits == "nan";
            if (!looks_real)
            {
                std::int64_t v = 0;
                auto [p, ec] = std::from_chars(b, e, v);
                if (ec == std::errc() && p == e && !digits.empty())
                {
                    out = v;
                    return s.substr(end);
                }
            }
            double v = 0.0;
            auto [p, ec] = std::from_chars(b, e, v);
            if (ec != std::errc() || p != e || digits.empty())
                throw bad("cannot parse value '" + std::string(tok) + "'");
            out = v;
            return s.substr(end);
        }

        inline std::string quote(const std::string & s)
        {
            std::string out = "\"";
            for (char c : s)
            {
                switch (c)
                {
                    case '"': out += "\\\""; break;
                    case '\\': out += "\\\\"; break;
                    case '\n': out += "\\n"; break;
                    case '\t': out += "\\t"; break;
                    default: out += c;
                }
            }
            return out + "\"";
        }
    }

    /**
     * Parses config text over the defaults. ConfigError carries the 1-based
     * line in index() and the byte offset of that line in offset().
     */
    inline PipelineConfig parse_config(std::string_view text)
    {
        PipelineConfig cfg;
        std::set<std::string, std::less<>> seen;
        std::size_t pos = 0;
        std::uint64_t line_no = 0;
        while (pos < text.size())
        {
            const std::size_t start = pos;
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string_view::npos)
                nl = text.size();
            const std::string_view raw = text.substr(pos, nl - pos);
            pos = nl + 1;
            ++line_no;
            auto bad = [&](std::string why) { return Error(ErrorKind::ConfigError, why, line_no, start); };
            std::string_view line = detail::trim(raw);
            if (line.empty() || line.front() == '#')
                continue;
            std::size_t k = 0;
            while (k < line.size() && detail::is_bare_key_char(line[k]))
                ++k;
            if (k == 0)
                throw bad("expected a key");
            const std::string_view key = line.substr(0, k);
            std::string_view rest = detail::trim(line.substr(k));
            if (rest.empty() || rest.front() != '=')
                throw bad("expected '=' after key '" + std::string(key) + "'");
            rest = detail::trim(rest.substr(1));
            detail::ConfigValue value;
            rest = detail::trim(detail::parse_config_value(rest, value, bad));
            if (!rest.empty() && rest.front() != '#')
                throw bad("unexpected text after value");

            const detail::ConfigField * field = nullptr;
            for (const auto & f : detail::config_schema())
                if (f.key == key)
                    field = &f;
            if (!field)
                throw bad("unknown key '" + std::string(key) + "'");
            if (!seen.emplace(key).second)
                throw bad("duplicate key '" + std::string(key) + "'");
            const bool ok = (field->type == detail::ConfigType::integer && std::holds_alternative<std::int64_t>(value)) ||
                            (field->type == detail::ConfigType::real &&
                             (std::holds_alternative<double>(value) || std::holds_alternative<std::int64_t>(value))) ||
                            (field->type == detail::ConfigType::boolean && std::holds_alternative<bool>(value)) ||
                            (field->type == detail::ConfigType::text && std::holds_alternative<std::string>(value));
            if (!ok)
                throw bad("wrong value type for '" + std::string(key) + "'");
            try
            {
                field->set(cfg, value);
            }
            catch (const Error & e)
            {
                throw bad(std::string(key) + ": " + e.what());
            }
        }
        cfg.validate();
        return cfg;
    }

    inline PipelineConfig load_config(const std::filesystem::path & path) { return parse_config(read_file(path)); }

    /// Every key in schema order; parse(serialize(c)) == c.
    inline std::string serialize_config(const PipelineConfig & cfg)
    {
        std::string out;
        for (const auto & f : detail::config_schema())
        {
            out += f.key;
            out += " = ";
            const auto v = f.get(cfg);
            if (const auto * i = std::get_if<std::int64_t>(&v))
                out += std::to_string(*i);
            else if (const auto * d = std::get_if<double>(&v))
            {
                std::string s = format_exact(*d);
                if (s.find_first_of(".eEn") == std::string::npos)
                    s += ".0";
                out += s;
            }
            else if (const auto * b = std::get_if<bool>(&v))
                out += *b ? "true" : "false";
            else
                out += detail::quote(std::get<std::string>(v));
            out += '\n';
        }
        return out;
    }
}
