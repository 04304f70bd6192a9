#include "spice/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "spice/errors.hpp"
#include "toml.hpp"

namespace fs = std::filesystem;

namespace spice {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& context) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        throw ValidationError(context + ": '" + s + "' is not a number");
    }
    return v;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string resolve_path(const std::string& base_dir, const std::string& p) {
    if (p.empty()) return p;
    fs::path fp(p);
    if (fp.is_absolute()) return p;
    return (fs::path(base_dir) / fp).string();
}

std::string side_name(Side s) { return s == Side::Person ? "person" : "item"; }

}  // namespace

// --- CSV ---------------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    size_t i = 0;
    auto end_field = [&]() {
        row.push_back(field);
        field.clear();
    };
    auto end_row = [&]() {
        end_field();
        // skip blank lines
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(row);
        row.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_row();
        } else {
            field += c;
        }
        ++i;
    }
    if (quoted) throw ValidationError(path + ": unterminated quoted field");
    if (!field.empty() || !row.empty()) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_row();
    }
    return rows;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

// --- responses -----------------------------------------------------------------

ParsedResponses parse_responses(const std::string& path, bool allow_duplicates) {
    const auto rows = read_csv(path);
    if (rows.empty()) throw ValidationError(path + ": empty file");
    const auto& header = rows.front();
    auto col = [&](const std::string& name) -> int {
        for (size_t c = 0; c < header.size(); ++c) {
            if (header[c] == name) return static_cast<int>(c);
        }
        return -1;
    };
    const int c_person = col("person_id");
    const int c_item = col("item_id");
    const int c_resp = col("response");
    const int c_weight = col("weight");
    if (c_person < 0 || c_item < 0 || c_resp < 0) {
        throw ValidationError(path + ": required columns person_id,item_id,response");
    }
    if (rows.size() < 2) throw ValidationError(path + ": no response rows");

    ParsedResponses out;
    std::unordered_map<std::string, int> pidx, iidx;
    std::vector<double> raw_weight;
    std::unordered_set<std::uint64_t> seen_pairs;

    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::string where = path + " row " + std::to_string(r + 1);
        if (static_cast<int>(row.size()) <= std::max({c_person, c_item, c_resp})) {
            throw ValidationError(where + ": missing fields");
        }
        const std::string& pid = row[c_person];
        const std::string& iid = row[c_item];
        if (pid.empty() || iid.empty()) throw ValidationError(where + ": empty id");

        int pi;
        auto pit = pidx.find(pid);
        if (pit == pidx.end()) {
            pi = static_cast<int>(out.person_ids.size());
            pidx.emplace(pid, pi);
            out.person_ids.push_back(pid);
            raw_weight.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            pi = pit->second;
        }
        int ii;
        auto iit = iidx.find(iid);
        if (iit == iidx.end()) {
            ii = static_cast<int>(out.item_ids.size());
            iidx.emplace(iid, ii);
            out.item_ids.push_back(iid);
        } else {
            ii = iit->second;
        }

        if (!allow_duplicates) {
            const std::uint64_t key =
                (static_cast<std::uint64_t>(pi) << 32) | static_cast<std::uint32_t>(ii);
            if (!seen_pairs.insert(key).second) {
                throw ValidationError(where + ": duplicate (person,item) pair (" + pid + "," +
                                      iid + ")");
            }
        }

        const double value = parse_double(row[c_resp], where + " response");
        if (c_weight >= 0) {
            if (static_cast<int>(row.size()) <= c_weight) {
                throw ValidationError(where + ": missing weight field");
            }
            const double w = parse_double(row[c_weight], where + " weight");
            if (w < 0) throw ValidationError(where + ": negative weight");
            if (std::isnan(raw_weight[pi])) {
                raw_weight[pi] = w;
            } else if (raw_weight[pi] != w) {
                throw ValidationError(where + ": conflicting weights for person " + pid);
            }
        }

        ResponseRecord rec;
        rec.obs_index = static_cast<int>(out.records.size());
        rec.person_index = pi;
        rec.item_index = ii;
        rec.value = static_cast<real>(value);
        out.records.push_back(rec);
    }

    Vector w(out.person_ids.size());
    for (size_t i = 0; i < raw_weight.size(); ++i) {
        w[i] = static_cast<real>(std::isnan(raw_weight[i]) ? 1.0 : raw_weight[i]);
    }
    out.person_weight = normalize_weights(w);
    return out;
}

Matrix parse_features(const std::string& path, const std::vector<std::string>& unit_ids,
                      bool intercept, std::vector<std::string>* column_names) {
    const auto rows = read_csv(path);
    if (rows.size() < 2) throw ValidationError(path + ": needs a header and one row per unit");
    const auto& header = rows.front();
    if (header.empty() || header[0] != "unit_id") {
        throw ValidationError(path + ": first column must be unit_id");
    }
    const int nf = static_cast<int>(header.size()) - 1;
    if (nf < 1 && !intercept) throw ValidationError(path + ": no feature columns");

    std::unordered_map<std::string, int> want;
    for (size_t i = 0; i < unit_ids.size(); ++i) want.emplace(unit_ids[i], static_cast<int>(i));

    const int p = nf + (intercept ? 1 : 0);
    Matrix x0 = Matrix::Zero(static_cast<int>(unit_ids.size()), p);
    std::vector<bool> seen(unit_ids.size(), false);
    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::string where = path + " row " + std::to_string(r + 1);
        if (static_cast<int>(row.size()) != nf + 1) {
            throw ValidationError(where + ": expected " + std::to_string(nf + 1) + " fields");
        }
        auto it = want.find(row[0]);
        if (it == want.end()) {
            throw ValidationError(where + ": unit '" + row[0] + "' is not in this block");
        }
        if (seen[it->second]) throw ValidationError(where + ": duplicate unit '" + row[0] + "'");
        seen[it->second] = true;
        if (intercept) x0(it->second, 0) = 1;
        for (int c = 0; c < nf; ++c) {
            x0(it->second, c + (intercept ? 1 : 0)) =
                static_cast<real>(parse_double(row[c + 1], where));
        }
    }
    for (size_t i = 0; i < unit_ids.size(); ++i) {
        if (!seen[i]) throw ValidationError(path + ": no feature row for unit '" + unit_ids[i] + "'");
    }

    std::vector<std::string> names;
    if (intercept) names.push_back("(intercept)");
    for (int c = 0; c < nf; ++c) names.push_back(header[c + 1]);

    Eigen::ColPivHouseholderQR<Matrix> qr(x0);
    if (qr.rank() < p) {
        // the trailing permuted columns are the dependent ones
        const auto& perm = qr.colsPermutation().indices();
        const int dependent = perm[p - 1];
        throw ValidationError(path + ": feature matrix is rank deficient; column '" +
                              names[dependent] + "' is linearly dependent");
    }
    if (column_names) *column_names = names;
    return x0;
}

// --- calibration config ----------------------------------------------------------

LoadedCalibration load_calibration(const std::string& config_path) {
    const toml::Value root = toml::parse_file(config_path);
    const std::string base = fs::path(config_path).has_parent_path()
                                 ? fs::path(config_path).parent_path().string()
                                 : ".";

    LoadedCalibration lc;
    lc.config_path = config_path;

    const toml::Value* data_tab = toml::find(root, "data");
    if (!data_tab) throw ValidationError("config: missing [data] section");
    const std::string responses_rel = toml::get_str(*data_tab, "responses", "");
    if (responses_rel.empty()) throw ValidationError("config: data.responses is required");
    lc.responses_path = resolve_path(base, responses_rel);
    const bool allow_dup = toml::get_bool(*data_tab, "allow_duplicate_pairs", false);

    if (const toml::Value* s = toml::find(root, "sampler")) {
        const toml::Value* phases = toml::find(*s, "phases");
        if (phases) {
            if (phases->type != toml::Value::Type::Array || phases->arr.size() != 4) {
                throw ValidationError("config: sampler.phases must be [M1,M2,M3,M4]");
            }
            lc.sampler.M1 = static_cast<int>(phases->arr[0].num);
            lc.sampler.M2 = static_cast<int>(phases->arr[1].num);
            lc.sampler.M3 = static_cast<int>(phases->arr[2].num);
            lc.sampler.M4 = static_cast<int>(phases->arr[3].num);
        }
        lc.sampler.thin = static_cast<int>(toml::get_num(*s, "thin", lc.sampler.thin));
        lc.sampler.n_chains = static_cast<int>(toml::get_num(*s, "chains", lc.sampler.n_chains));
        lc.sampler.seed = static_cast<std::uint64_t>(toml::get_num(*s, "seed", 0));
        lc.sampler.a0 = toml::get_num(*s, "accept_lower", lc.sampler.a0);
        lc.sampler.a1 = toml::get_num(*s, "accept_upper", lc.sampler.a1);
        lc.sampler.a_star = toml::get_num(*s, "accept_target", lc.sampler.a_star);
        lc.sampler.init_proposal_sd = toml::get_num(*s, "init_proposal_sd", lc.sampler.init_proposal_sd);
        lc.sampler.worker_count = static_cast<int>(toml::get_num(*s, "workers", lc.sampler.worker_count));
    }
    lc.sampler.check();

    if (const toml::Value* o = toml::find(root, "output")) {
        lc.output_dir = resolve_path(base, toml::get_str(*o, "dir", lc.output_dir));
    }

    // responses first: they define the unit universe
    ParsedResponses parsed = parse_responses(lc.responses_path, allow_dup);

    const toml::Value* blocks_tab = toml::find(root, "block");
    if (!blocks_tab) throw ValidationError("config: at least one [block.N] section is required");

    struct RawBlock {
        int id;
        const toml::Value* tab;
        Side side;
    };
    std::vector<RawBlock> raw;
    for (const auto& [key, val] : blocks_tab->tab) {
        int id = 0;
        try {
            id = std::stoi(key);
        } catch (...) {
            throw ValidationError("config: block id '" + key + "' must be an integer");
        }
        const std::string side = toml::get_str(val, "side", "");
        if (side != "person" && side != "item") {
            throw ValidationError("config: block." + key + ".side must be 'person' or 'item'");
        }
        raw.push_back({id, &val, side == "person" ? Side::Person : Side::Item});
    }
    std::sort(raw.begin(), raw.end(), [](const RawBlock& a, const RawBlock& b) { return a.id < b.id; });

    // membership resolution per side
    auto assign_members = [&](Side side) {
        const auto& ids = (side == Side::Person) ? parsed.person_ids : parsed.item_ids;
        std::unordered_map<std::string, int> index_of;
        for (size_t i = 0; i < ids.size(); ++i) index_of.emplace(ids[i], static_cast<int>(i));

        std::vector<int> owner(ids.size(), -1);
        std::map<int, std::vector<int>> rosters;
        int catch_all = -1;
        for (const auto& rb : raw) {
            if (rb.side != side) continue;
            const std::string members = toml::get_str(*rb.tab, "members", "");
            if (members.empty()) {
                if (catch_all != -1) {
                    throw ValidationError("config: two " + side_name(side) +
                                          " blocks without member rosters");
                }
                catch_all = rb.id;
                rosters[rb.id] = {};
                continue;
            }
            const auto rows = read_csv(resolve_path(base, members));
            if (rows.size() < 2 || rows[0].empty() || rows[0][0] != "unit_id") {
                throw ValidationError(members + ": expected header unit_id");
            }
            for (size_t r = 1; r < rows.size(); ++r) {
                auto it = index_of.find(rows[r][0]);
                if (it == index_of.end()) {
                    throw ValidationError(members + " row " + std::to_string(r + 1) + ": unit '" +
                                          rows[r][0] + "' does not appear in the responses");
                }
                if (owner[it->second] != -1) {
                    throw ValidationError(members + " row " + std::to_string(r + 1) + ": unit '" +
                                          rows[r][0] + "' already assigned to block " +
                                          std::to_string(owner[it->second]));
                }
                owner[it->second] = rb.id;
                rosters[rb.id].push_back(it->second);
            }
        }
        for (size_t i = 0; i < ids.size(); ++i) {
            if (owner[i] == -1) {
                if (catch_all == -1) {
                    throw ValidationError("config: " + side_name(side) + " '" + ids[i] +
                                          "' is not assigned to any block");
                }
                owner[i] = catch_all;
                rosters[catch_all].push_back(static_cast<int>(i));
            }
        }
        return rosters;
    };
    std::map<int, std::vector<int>> person_rosters = assign_members(Side::Person);
    std::map<int, std::vector<int>> item_rosters = assign_members(Side::Item);

    Dataset& data = lc.data;
    data.responses = parsed.records;
    data.person_ids = parsed.person_ids;
    data.item_ids = parsed.item_ids;
    data.persons.resize(parsed.person_ids.size());
    data.items.resize(parsed.item_ids.size());
    for (size_t i = 0; i < data.persons.size(); ++i) {
        data.persons[i].unit_id = static_cast<int>(i);
        data.persons[i].weight = parsed.person_weight[i];
    }
    for (size_t j = 0; j < data.items.size(); ++j) data.items[j].unit_id = static_cast<int>(j);

    lc.echo.emplace_back("config_path", config_path);
    lc.echo.emplace_back("data.responses", lc.responses_path);
    lc.echo.emplace_back("data.allow_duplicate_pairs", allow_dup ? "true" : "false");
    lc.echo.emplace_back("output.dir", lc.output_dir);

    bool any_anchor = false;
    bool any_person_scale_fix = false;

    for (const auto& rb : raw) {
        const toml::Value& tab = *rb.tab;
        const std::string prefix = "block." + std::to_string(rb.id) + ".";
        BlockSpec spec;
        spec.block_id = rb.id;
        spec.side = rb.side;
        BlockConfig cfg;

        const auto& roster = (rb.side == Side::Person) ? person_rosters[rb.id]
                                                       : item_rosters[rb.id];
        if (roster.empty()) {
            throw ValidationError("config: block " + std::to_string(rb.id) + " has no units");
        }
        spec.unit_ids = roster;

        if (rb.side == Side::Person) {
            spec.dim_K = static_cast<int>(toml::get_num(tab, "dim", 1));
        } else {
            const std::string fam = toml::get_str(tab, "family", "");
            if (fam.empty()) {
                throw ValidationError("config: block " + std::to_string(rb.id) +
                                      " (item) requires a family");
            }
            spec.family = ItemFamily::from_name(fam, static_cast<int>(toml::get_num(tab, "categories", 0)));
            spec.dim_K = spec.family.param_count();
            cfg.person_dim = static_cast<int>(toml::get_num(tab, "person_dim", 1)) - 1;
        }
        const int K = spec.dim_K;

        // features (and the unit feature vectors)
        const std::string feat_rel = toml::get_str(tab, "features", "");
        const bool intercept = toml::get_bool(tab, "intercept", true);
        auto& units = (rb.side == Side::Person) ? data.persons : data.items;
        const auto& all_ids = (rb.side == Side::Person) ? data.person_ids : data.item_ids;
        Matrix x0;
        if (feat_rel.empty()) {
            spec.feature_count_p = 1;
            x0 = Matrix::Ones(static_cast<int>(roster.size()), 1);
        } else {
            std::vector<std::string> block_ids;
            for (int u : roster) block_ids.push_back(all_ids[u]);
            x0 = parse_features(resolve_path(base, feat_rel), block_ids, intercept);
            spec.feature_count_p = static_cast<int>(x0.cols());
        }
        const int p = spec.feature_count_p;
        for (size_t r = 0; r < roster.size(); ++r) {
            units[roster[r]].block_id = rb.id;
            units[roster[r]].features = x0.row(static_cast<int>(r)).transpose();
            units[roster[r]].latent = Vector::Zero(K);
        }

        // priors
        cfg.prior.b0 = toml::get_vector(tab, "b0", p * K, 0.0);
        const toml::Value* om = toml::find(tab, "omega0");
        if (!om || om->type == toml::Value::Type::Number) {
            const double v = om ? om->num : 0.0;
            if (v < 0) throw ValidationError("config: " + prefix + "omega0 must be >= 0");
            cfg.prior.Omega0 = Matrix::Identity(p * K, p * K) * static_cast<real>(v);
        } else if (om->type == toml::Value::Type::Array && !om->arr.empty() &&
                   om->arr[0].type == toml::Value::Type::Number) {
            const Vector diag = toml::get_vector(tab, "omega0", p * K, 0.0);
            cfg.prior.Omega0 = diag.asDiagonal();
        } else {
            cfg.prior.Omega0 = toml::get_matrix(*om, prefix + "omega0", p * K, p * K);
        }
        cfg.prior.S_lower = toml::get_vector(tab, "s_lower", K, 0.01);
        cfg.prior.S_upper = toml::get_vector(tab, "s_upper", K, 10.0);
        cfg.prior.eta = static_cast<real>(toml::get_num(tab, "eta", 1.0));

        // fixed regression parameters
        if (const toml::Value* fb = toml::find(tab, "fix_B")) {
            cfg.fix_B = true;
            cfg.B_value = toml::get_matrix(*fb, prefix + "fix_B", p, K);
        }
        if (const toml::Value* fs_ = toml::find(tab, "fix_S")) {
            cfg.fix_S = true;
            if (fs_->type == toml::Value::Type::Number) {
                cfg.S_value = Vector::Constant(K, static_cast<real>(fs_->num));
            } else {
                cfg.S_value = toml::get_vector(tab, "fix_S", K, 1.0);
            }
        }
        if (const toml::Value* fr = toml::find(tab, "fix_R")) {
            cfg.fix_R = true;
            if (fr->type == toml::Value::Type::String && fr->str == "identity") {
                cfg.R_value = Matrix::Identity(K, K);
            } else {
                cfg.R_value = toml::get_matrix(*fr, prefix + "fix_R", K, K);
            }
        }
        if (rb.side == Side::Person && cfg.fix_B && cfg.fix_S) any_person_scale_fix = true;

        // anchored units (values on the natural scale for items)
        const std::string anchors_rel = toml::get_str(tab, "anchors", "");
        if (!anchors_rel.empty()) {
            const std::string apath = resolve_path(base, anchors_rel);
            const auto rows = read_csv(apath);
            if (rows.size() < 2 || rows[0].empty() || rows[0][0] != "unit_id") {
                throw ValidationError(apath + ": expected header unit_id,v1,...");
            }
            std::unordered_map<std::string, int> index_of;
            for (int u : roster) index_of.emplace(all_ids[u], u);
            for (size_t r = 1; r < rows.size(); ++r) {
                const std::string where = apath + " row " + std::to_string(r + 1);
                if (static_cast<int>(rows[r].size()) != K + 1) {
                    throw ValidationError(where + ": expected " + std::to_string(K + 1) +
                                          " fields");
                }
                auto it = index_of.find(rows[r][0]);
                if (it == index_of.end()) {
                    throw ValidationError(where + ": unit '" + rows[r][0] +
                                          "' is not in block " + std::to_string(rb.id));
                }
                Vector v(K);
                for (int k = 0; k < K; ++k) {
                    v[k] = static_cast<real>(parse_double(rows[r][k + 1], where));
                }
                Unit& u = units[it->second];
                if (rb.side == Side::Item) {
                    try {
                        u.latent = to_unconstrained(spec.family, v);
                    } catch (const std::domain_error& e) {
                        throw ValidationError(where + ": " + e.what());
                    }
                } else {
                    u.latent = v;
                }
                u.fixed = true;
                any_anchor = true;
            }
        }

        if (rb.side == Side::Person) {
            data.person_blocks.push_back(spec);
        } else {
            data.item_blocks.push_back(spec);
        }
        lc.blocks.emplace(rb.id, cfg);

        lc.echo.emplace_back(prefix + "side", side_name(rb.side));
        if (rb.side == Side::Item) {
            lc.echo.emplace_back(prefix + "family", spec.family.name());
            lc.echo.emplace_back(prefix + "person_dim", std::to_string(cfg.person_dim + 1));
        }
        lc.echo.emplace_back(prefix + "dim", std::to_string(K));
        lc.echo.emplace_back(prefix + "p", std::to_string(p));
        lc.echo.emplace_back(prefix + "units", std::to_string(roster.size()));
        lc.echo.emplace_back(prefix + "features", feat_rel.empty() ? "(intercept only)" : feat_rel);
        lc.echo.emplace_back(prefix + "intercept", intercept ? "true" : "false");
        lc.echo.emplace_back(prefix + "eta", fmt17(cfg.prior.eta));
        lc.echo.emplace_back(prefix + "s_lower", fmt17(cfg.prior.S_lower[0]));
        lc.echo.emplace_back(prefix + "s_upper", fmt17(cfg.prior.S_upper[0]));
        lc.echo.emplace_back(prefix + "fix_B", cfg.fix_B ? "true" : "false");
        lc.echo.emplace_back(prefix + "fix_S", cfg.fix_S ? "true" : "false");
        lc.echo.emplace_back(prefix + "fix_R", cfg.fix_R ? "true" : "false");
        lc.echo.emplace_back(prefix + "anchors", anchors_rel.empty() ? "(none)" : anchors_rel);
    }

    if (!any_anchor && !any_person_scale_fix) {
        lc.warnings.push_back(
            "identification: no person block has fixed location/scale and no units are "
            "anchored; the latent scale may be unidentified");
    }

    lc.echo.emplace_back("sampler.phases",
                         std::to_string(lc.sampler.M1) + "," + std::to_string(lc.sampler.M2) +
                             "," + std::to_string(lc.sampler.M3) + "," +
                             std::to_string(lc.sampler.M4));
    lc.echo.emplace_back("sampler.thin", std::to_string(lc.sampler.thin));
    lc.echo.emplace_back("sampler.chains", std::to_string(lc.sampler.n_chains));
    lc.echo.emplace_back("sampler.seed", std::to_string(lc.sampler.seed));
    lc.echo.emplace_back("sampler.accept_lower", fmt17(lc.sampler.a0));
    lc.echo.emplace_back("sampler.accept_upper", fmt17(lc.sampler.a1));
    lc.echo.emplace_back("sampler.accept_target", fmt17(lc.sampler.a_star));
    lc.echo.emplace_back("sampler.init_proposal_sd", fmt17(lc.sampler.init_proposal_sd));
    lc.echo.emplace_back("sampler.workers", std::to_string(lc.sampler.worker_count));
    lc.echo.emplace_back("n_responses", std::to_string(data.responses.size()));
    lc.echo.emplace_back("n_persons", std::to_string(data.persons.size()));
    lc.echo.emplace_back("n_items", std::to_string(data.items.size()));
    return lc;
}

// --- summary & fit -------------------------------------------------------------

std::vector<SummaryRow> make_summary(const ParamTable& params,
                                     const std::vector<PosteriorSamples>& chains) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<SummaryRow> rows;
    rows.reserve(params.entries.size());
    for (size_t idx = 0; idx < params.entries.size(); ++idx) {
        const ParamEntry& e = params.entries[idx];
        SummaryRow row;
        row.name = e.name;
        Moments pooled;
        std::vector<Moments> per_chain;
        for (const auto& ch : chains) {
            pooled = Moments::merged(pooled, ch.moments[idx]);
            per_chain.push_back(ch.moments[idx]);
        }
        row.mean = pooled.mean;
        row.sd = pooled.sd();
        if (e.mh_slot >= 0) {
            std::int64_t acc = 0, att = 0;
            for (const auto& ch : chains) {
                acc += ch.accepts4[e.mh_slot];
                att += ch.attempts4[e.mh_slot];
            }
            row.acceptance = att > 0 ? static_cast<double>(acc) / static_cast<double>(att) : nan;
        } else {
            row.acceptance = nan;
        }
        if (chains.size() >= 2) {
            try {
                row.rhat = gelman_rubin_from_moments(per_chain);
            } catch (const std::invalid_argument&) {
                row.rhat = nan;
            }
        } else {
            row.rhat = nan;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

FitReport compute_fit_report(const GibbsSampler& sampler,
                             const std::vector<PosteriorSamples>& chains) {
    const Model& m = sampler.model();
    FitReport fit;

    WaicAccumulator merged = chains.front().loglik;
    for (size_t c = 1; c < chains.size(); ++c) merged.merge(chains[c].loglik);
    const WaicResult w = merged.result();
    fit.elpd = w.elpd;
    fit.p_waic = w.p_waic;
    fit.waic = w.waic;

    // pooled stored draws drive the replicates
    std::vector<std::pair<int, int>> rows;
    for (size_t c = 0; c < chains.size(); ++c) {
        for (int r = 0; r < chains[c].draws.rows(); ++r) {
            rows.emplace_back(static_cast<int>(c), r);
        }
    }
    if (rows.empty()) return fit;

    const int np = static_cast<int>(m.data.persons.size());
    Matrix theta = Matrix::Zero(np, m.person_K);
    std::vector<real> nat(m.item_flat, 0);
    for (int i = 0; i < np; ++i) {
        if (m.data.persons[i].fixed) theta.row(i) = m.data.persons[i].latent.transpose();
    }
    for (size_t j = 0; j < m.data.items.size(); ++j) {
        if (!m.data.items[j].fixed) continue;
        const BlockModel& bm = m.blocks[m.item_block_of[j]];
        const Vector v = to_natural(bm.spec.family, m.data.items[j].latent);
        std::copy(v.data(), v.data() + v.size(), nat.begin() + m.item_offset[j]);
    }

    std::vector<real> observed(m.data.responses.size());
    for (const auto& r : m.data.responses) observed[r.obs_index] = r.value;

    const auto stats = builtin_ppc_statistics(m.data, m.linkage, sampler.config().seed);

    ReplicateSimulator sim = [&](int d, std::vector<real>& values) {
        const int c = rows[d].first;
        const int r = rows[d].second;
        const Matrix& draws = chains[c].draws;
        for (size_t idx = 0; idx < m.params.entries.size(); ++idx) {
            const ParamEntry& e = m.params.entries[idx];
            if (e.kind == ParamEntry::Kind::Person) {
                theta(e.unit, e.j) = draws(r, static_cast<Eigen::Index>(idx));
            } else if (e.kind == ParamEntry::Kind::Item) {
                nat[m.item_offset[e.unit] + e.j] = draws(r, static_cast<Eigen::Index>(idx));
            }
        }
        for (const auto& resp : m.data.responses) {
            const BlockModel& bm = m.blocks[m.item_block_of[resp.item_index]];
            const Eigen::Map<const Vector> psi(nat.data() + m.item_offset[resp.item_index],
                                               bm.spec.dim_K);
            RngStream rng(sampler.config().seed, static_cast<std::uint32_t>(resp.obs_index),
                          static_cast<std::uint32_t>(d), 0, StreamPurpose::Ppc);
            values[resp.obs_index] = static_cast<real>(sample_response(
                bm.spec.family, psi, theta(resp.person_index, bm.person_dim), rng));
        }
    };

    const PppResult ppp =
        posterior_predictive_check(static_cast<int>(rows.size()), sim, observed, stats);
    fit.ppp = ppp.ppp;
    fit.ppp_skipped = ppp.skipped;
    return fit;
}

// --- writers ----------------------------------------------------------------------

void preflight_output_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
    const fs::path probe = fs::path(dir) / ".write_probe";
    std::ofstream out(probe);
    if (!out) throw ValidationError("output directory '" + dir + "' is not writable");
    out << "ok";
    out.close();
    fs::remove(probe, ec);
}

namespace {

void write_ids(const std::string& path, const std::vector<std::string>& ids,
               const std::string& kind) {
    std::ofstream out(path);
    out << "index," << kind << "_id\n";
    for (size_t i = 0; i < ids.size(); ++i) {
        out << (i + 1) << ',' << csv_escape(ids[i]) << '\n';
    }
}

void write_fixed(const std::string& path, const Model& m) {
    std::ofstream out(path);
    out << "name,value\n";
    for (const auto& bm : m.blocks) {
        const int id = bm.spec.block_id;
        const int p = bm.spec.feature_count_p;
        const int K = bm.spec.dim_K;
        for (int c = 0; c < K; ++c) {
            for (int r = 0; r < p; ++r) {
                if (bm.init.fixed_B[c * p + r]) {
                    out << csv_escape("block" + std::to_string(id) + ".B[" +
                                      std::to_string(r + 1) + "," + std::to_string(c + 1) + "]")
                        << ',' << fmt17(bm.init.B(r, c)) << '\n';
                }
            }
        }
        for (int k = 0; k < K; ++k) {
            if (bm.init.fixed_S[k]) {
                out << "block" << id << ".S[" << (k + 1) << "]," << fmt17(bm.init.S[k]) << '\n';
            }
        }
        if (bm.init.fixed_R && K >= 2) {
            const Matrix R = bm.init.correlation();
            for (int i = 1; i < K; ++i) {
                for (int j = 0; j < i; ++j) {
                    out << csv_escape("block" + std::to_string(id) + ".R[" +
                                      std::to_string(i + 1) + "," + std::to_string(j + 1) + "]")
                        << ',' << fmt17(R(i, j)) << '\n';
                }
            }
        }
    }
    for (size_t i = 0; i < m.data.persons.size(); ++i) {
        if (!m.data.persons[i].fixed) continue;
        for (int k = 0; k < m.person_K; ++k) {
            out << "person" << (i + 1) << ".dim" << (k + 1) << ','
                << fmt17(m.data.persons[i].latent[k]) << '\n';
        }
    }
    for (size_t j = 0; j < m.data.items.size(); ++j) {
        if (!m.data.items[j].fixed) continue;
        const BlockModel& bm = m.blocks[m.item_block_of[j]];
        const Vector nat = to_natural(bm.spec.family, m.data.items[j].latent);
        const auto names = bm.spec.family.param_names();
        for (int k = 0; k < bm.spec.dim_K; ++k) {
            out << "item" << (j + 1) << '.' << names[k] << ',' << fmt17(nat[k]) << '\n';
        }
    }
}

}  // namespace

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::ofstream out(path);
    out << "name,mean,sd,acceptance,rhat\n";
    for (const auto& r : rows) {
        out << csv_escape(r.name) << ',' << fmt17(r.mean) << ',' << fmt17(r.sd) << ','
            << fmt17(r.acceptance) << ',' << fmt17(r.rhat) << '\n';
    }
}

void write_fit_txt(const std::string& path, const FitReport& fit) {
    std::ofstream out(path);
    out << "elpd = " << fmt17(fit.elpd) << '\n';
    out << "p_waic = " << fmt17(fit.p_waic) << '\n';
    out << "waic = " << fmt17(fit.waic) << '\n';
    for (const auto& [name, value] : fit.ppp) {
        out << "ppp." << name << " = " << fmt17(value) << '\n';
    }
    for (const auto& [name, count] : fit.ppp_skipped) {
        if (count > 0) out << "ppp_skipped." << name << " = " << count << '\n';
    }
}

void write_run_outputs(const std::string& dir, const GibbsSampler& sampler,
                       const std::vector<PosteriorSamples>& chains,
                       const std::vector<SummaryRow>& summary, const FitReport& fit,
                       const std::vector<std::pair<std::string, std::string>>& manifest_echo,
                       double timing_seconds) {
    const Model& m = sampler.model();
    fs::create_directories(dir);

    write_ids((fs::path(dir) / "person_ids.csv").string(), m.data.person_ids, "person");
    write_ids((fs::path(dir) / "item_ids.csv").string(), m.data.item_ids, "item");
    write_fixed((fs::path(dir) / "fixed.csv").string(), m);

    for (size_t c = 0; c < chains.size(); ++c) {
        const std::string tag = "chain" + std::to_string(c + 1);
        {
            std::ofstream out(fs::path(dir) / (tag + "_draws.csv"));
            for (size_t idx = 0; idx < chains[c].param_names.size(); ++idx) {
                out << (idx ? "," : "") << csv_escape(chains[c].param_names[idx]);
            }
            out << '\n';
            for (int r = 0; r < chains[c].draws.rows(); ++r) {
                for (int j = 0; j < chains[c].draws.cols(); ++j) {
                    out << (j ? "," : "") << fmt17(static_cast<double>(chains[c].draws(r, j)));
                }
                out << '\n';
            }
        }
        {
            std::ofstream out(fs::path(dir) / (tag + "_moments.csv"));
            out << "name,count,mean,m2,accepts,attempts\n";
            for (size_t idx = 0; idx < m.params.entries.size(); ++idx) {
                const ParamEntry& e = m.params.entries[idx];
                const Moments& mo = chains[c].moments[idx];
                out << csv_escape(e.name) << ',' << mo.count << ',' << fmt17(mo.mean) << ','
                    << fmt17(mo.m2);
                if (e.mh_slot >= 0) {
                    out << ',' << chains[c].accepts4[e.mh_slot] << ','
                        << chains[c].attempts4[e.mh_slot];
                } else {
                    out << ",,";
                }
                out << '\n';
            }
        }
        {
            std::ofstream out(fs::path(dir) / (tag + "_loglik.csv"));
            out << "obs,count,lse_max,lse_sum,mean,m2\n";
            for (int n = 0; n < chains[c].loglik.n_obs(); ++n) {
                const auto s = chains[c].loglik.obs_state(n);
                out << (n + 1) << ',' << s.count << ',' << fmt17(s.lse_max) << ','
                    << fmt17(s.lse_sum) << ',' << fmt17(s.mean) << ',' << fmt17(s.m2) << '\n';
            }
        }
    }

    write_summary_csv((fs::path(dir) / "summary.csv").string(), summary);
    write_fit_txt((fs::path(dir) / "fit.txt").string(), fit);

    {
        std::ofstream out(fs::path(dir) / "manifest.txt");
        out << "format = spice-manifest-1\n";
        out << "version = " << kVersion << "\n";
        for (const auto& [k, v] : manifest_echo) out << k << " = " << v << '\n';
        out << "timing_seconds = " << fmt17(timing_seconds) << '\n';
    }
}

// --- readers for diagnose -----------------------------------------------------

std::map<std::string, std::string> read_manifest(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.txt");
    if (!in) throw ValidationError("cannot open manifest in '" + dir + "'");
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

PosteriorSamples read_chain(const std::string& dir, int chain_number, const ParamTable& params,
                            int n_obs) {
    const std::string tag = "chain" + std::to_string(chain_number);
    PosteriorSamples out;

    {
        const auto rows = read_csv((fs::path(dir) / (tag + "_draws.csv")).string());
        if (rows.empty()) throw ValidationError(tag + "_draws.csv is empty");
        const auto& header = rows.front();
        if (header.size() != params.entries.size()) {
            throw ValidationError(tag + "_draws.csv: parameter count mismatch with the model");
        }
        for (size_t idx = 0; idx < header.size(); ++idx) {
            if (header[idx] != params.entries[idx].name) {
                throw ValidationError(tag + "_draws.csv: column '" + header[idx] +
                                      "' does not match model parameter '" +
                                      params.entries[idx].name + "'");
            }
            out.param_names.push_back(header[idx]);
        }
        out.draws.resize(static_cast<Eigen::Index>(rows.size() - 1),
                         static_cast<Eigen::Index>(header.size()));
        for (size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != header.size()) {
                throw ValidationError(tag + "_draws.csv row " + std::to_string(r + 1) +
                                      ": wrong field count");
            }
            for (size_t j = 0; j < header.size(); ++j) {
                out.draws(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(j)) =
                    static_cast<real>(parse_double(rows[r][j], tag + "_draws.csv"));
            }
        }
    }
    {
        const auto rows = read_csv((fs::path(dir) / (tag + "_moments.csv")).string());
        if (rows.size() != params.entries.size() + 1) {
            throw ValidationError(tag + "_moments.csv: row count mismatch");
        }
        out.moments.assign(params.entries.size(), Moments{});
        out.accepts4.assign(params.mh_count, 0);
        out.attempts4.assign(params.mh_count, 0);
        for (size_t r = 1; r < rows.size(); ++r) {
            const auto& row = rows[r];
            const ParamEntry& e = params.entries[r - 1];
            if (row[0] != e.name) {
                throw ValidationError(tag + "_moments.csv: name mismatch at row " +
                                      std::to_string(r + 1));
            }
            Moments mo;
            mo.count = static_cast<std::int64_t>(parse_double(row[1], "moments count"));
            mo.mean = parse_double(row[2], "moments mean");
            mo.m2 = parse_double(row[3], "moments m2");
            out.moments[r - 1] = mo;
            if (e.mh_slot >= 0) {
                out.accepts4[e.mh_slot] =
                    static_cast<std::int64_t>(parse_double(row[4], "moments accepts"));
                out.attempts4[e.mh_slot] =
                    static_cast<std::int64_t>(parse_double(row[5], "moments attempts"));
            }
        }
    }
    {
        const auto rows = read_csv((fs::path(dir) / (tag + "_loglik.csv")).string());
        if (static_cast<int>(rows.size()) != n_obs + 1) {
            throw ValidationError(tag + "_loglik.csv: expected " + std::to_string(n_obs) +
                                  " observations");
        }
        out.loglik.reset(n_obs);
        std::int64_t draws = 0;
        for (int n = 0; n < n_obs; ++n) {
            const auto& row = rows[n + 1];
            WaicAccumulator::ObsState s;
            s.count = static_cast<std::int64_t>(parse_double(row[1], "loglik count"));
            s.lse_max = parse_double(row[2], "loglik lse_max");
            s.lse_sum = parse_double(row[3], "loglik lse_sum");
            s.mean = parse_double(row[4], "loglik mean");
            s.m2 = parse_double(row[5], "loglik m2");
            out.loglik.load_obs_state(n, s);
            draws = s.count;
        }
        out.loglik.set_draw_count(draws);
    }
    return out;
}

}  // namespace spice
