#include "spice/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "spice/errors.hpp"
#include "spice/io.hpp"
#include "spice/rng.hpp"
#include "toml.hpp"

namespace fs = std::filesystem;

namespace spice {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void SimSpec::check() const {
    if (blocks.empty()) throw ValidationError("sim: no blocks");
    int items = 0;
    bool any_person = false;
    for (const auto& b : blocks) {
        if (b.count < 1) throw ValidationError("sim: block counts must be >= 1");
        if (b.side == Side::Item) items += b.count;
        else any_person = true;
    }
    if (!any_person || items == 0) {
        throw ValidationError("sim: need at least one person and one item block");
    }
    if (responses_per_person < 1 || responses_per_person > items) {
        throw ValidationError("sim: responses_per_person must be in [1, total items]");
    }
    if (!(weight_lo > 0 && weight_hi >= weight_lo)) {
        throw ValidationError("sim: weight range must satisfy 0 < lo <= hi");
    }
    if (zipf && !(zipf_exponent > 0)) throw ValidationError("sim: zipf exponent must be > 0");
}

Matrix sample_lkj(int K, double eta, RngStream& rng) {
    Matrix R = Matrix::Identity(K, K);
    if (K < 2) return R;
    Matrix partial = Matrix::Zero(K, K);
    double beta = eta + (K - 1) / 2.0;
    for (int k = 0; k < K - 1; ++k) {
        beta -= 0.5;
        for (int i = k + 1; i < K; ++i) {
            partial(k, i) = static_cast<real>(2.0 * rng.beta(beta, beta) - 1.0);
            double p = partial(k, i);
            for (int l = k - 1; l >= 0; --l) {
                p = p * std::sqrt((1.0 - partial(l, i) * partial(l, i)) *
                                  (1.0 - partial(l, k) * partial(l, k))) +
                    partial(l, i) * partial(l, k);
            }
            R(k, i) = R(i, k) = static_cast<real>(p);
        }
    }
    return R;
}

SimResult generate(const SimSpec& spec) {
    spec.check();
    SimResult out;
    Dataset& data = out.data;

    // blocks sorted by id
    std::vector<SimBlock> blocks = spec.blocks;
    std::sort(blocks.begin(), blocks.end(),
              [](const SimBlock& a, const SimBlock& b) { return a.id < b.id; });
    for (size_t i = 1; i < blocks.size(); ++i) {
        if (blocks[i].id == blocks[i - 1].id) throw ValidationError("sim: duplicate block id");
    }

    int np = 0, ni = 0;
    for (const auto& b : blocks) {
        if (b.side == Side::Person) np += b.count;
        else ni += b.count;
    }
    data.persons.resize(np);
    data.items.resize(ni);
    for (int i = 0; i < np; ++i) data.person_ids.push_back("p" + std::to_string(i + 1));
    for (int j = 0; j < ni; ++j) data.item_ids.push_back("i" + std::to_string(j + 1));

    int next_person = 0, next_item = 0;
    std::vector<int> item_pdim(ni, 0);
    for (const auto& b : blocks) {
        const int K = (b.side == Side::Person) ? b.dim : b.family.param_count();
        const int p = b.n_features + (b.intercept ? 1 : 0);
        const bool from_file = !b.features_path.empty();

        Matrix B = b.true_B.size() ? b.true_B : Matrix::Zero(p, K);
        Vector S = b.true_S.size() ? b.true_S : Vector::Ones(K);
        Matrix R = b.true_R.size() ? b.true_R : Matrix::Identity(K, K);
        if (b.lkj_R) {
            RngStream rng(spec.seed, static_cast<std::uint32_t>(b.id), 0, 0,
                          StreamPurpose::SimLatent);
            R = sample_lkj(K, b.lkj_eta, rng);
        }
        if (B.rows() != p || B.cols() != K) {
            throw ValidationError("sim block " + std::to_string(b.id) + ": true_B must be " +
                                  std::to_string(p) + "x" + std::to_string(K));
        }
        if (S.size() != K || R.rows() != K || R.cols() != K) {
            throw ValidationError("sim block " + std::to_string(b.id) +
                                  ": true_S/true_R dimension mismatch");
        }
        for (int k = 0; k < K; ++k) {
            if (S[k] < 0) throw ValidationError("sim: true_S must be nonnegative");
        }
        Eigen::LLT<Matrix> llt(R);
        if (llt.info() != Eigen::Success) {
            throw ValidationError("sim block " + std::to_string(b.id) +
                                  ": true_R is not positive definite");
        }
        const Matrix M = S.asDiagonal() * Matrix(llt.matrixL());

        BlockSpec bs;
        bs.block_id = b.id;
        bs.side = b.side;
        bs.dim_K = K;
        bs.feature_count_p = p;
        bs.family = b.family;

        const int base = (b.side == Side::Person) ? next_person : next_item;
        const int entity_base = (b.side == Side::Person) ? 0 : np;

        // features
        Matrix X0(b.count, p);
        if (from_file) {
            std::vector<std::string> ids;
            for (int u = 0; u < b.count; ++u) {
                ids.push_back((b.side == Side::Person) ? data.person_ids[base + u]
                                                       : data.item_ids[base + u]);
            }
            X0 = parse_features(b.features_path, ids, b.intercept);
            if (X0.cols() != p) {
                throw ValidationError("sim block " + std::to_string(b.id) +
                                      ": feature file column count mismatch");
            }
        } else {
            for (int u = 0; u < b.count; ++u) {
                RngStream rng(spec.seed, static_cast<std::uint32_t>(entity_base + base + u), 0, 0,
                              StreamPurpose::SimFeature);
                int c = 0;
                if (b.intercept) X0(u, c++) = 1;
                for (int f = 0; f < b.n_features; ++f) {
                    X0(u, c++) = static_cast<real>(rng.normal());
                }
            }
        }

        // latents via u = B'X + eps
        for (int u = 0; u < b.count; ++u) {
            RngStream rng(spec.seed, static_cast<std::uint32_t>(entity_base + base + u), 1, 0,
                          StreamPurpose::SimLatent);
            Vector z(K);
            for (int k = 0; k < K; ++k) z[k] = static_cast<real>(rng.normal());
            const Vector latent = B.transpose() * X0.row(u).transpose() + M * z;

            Unit& unit = (b.side == Side::Person) ? data.persons[base + u]
                                                  : data.items[base + u];
            unit.unit_id = base + u;
            unit.block_id = b.id;
            unit.features = X0.row(u).transpose();
            unit.latent = latent;
            bs.unit_ids.push_back(base + u);
            if (b.side == Side::Item) item_pdim[base + u] = b.person_dim;
        }

        if (b.side == Side::Person) {
            data.person_blocks.push_back(bs);
            next_person += b.count;
        } else {
            data.item_blocks.push_back(bs);
            next_item += b.count;
        }

        // truth rows for the regression
        const std::string blk = "block" + std::to_string(b.id);
        for (int c = 0; c < K; ++c) {
            for (int r = 0; r < p; ++r) {
                const std::string suffix =
                    "B[" + std::to_string(r + 1) + "," + std::to_string(c + 1) + "]";
                out.truth.push_back({blk + "." + suffix, "", suffix, B(r, c)});
            }
        }
        for (int k = 0; k < K; ++k) {
            const std::string suffix = "S[" + std::to_string(k + 1) + "]";
            out.truth.push_back({blk + "." + suffix, "", suffix, S[k]});
        }
        for (int i = 1; i < K; ++i) {
            for (int j = 0; j < i; ++j) {
                const std::string suffix =
                    "R[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
                out.truth.push_back({blk + "." + suffix, "", suffix, R(i, j)});
            }
        }
    }

    // person weights
    for (int i = 0; i < np; ++i) {
        if (spec.weight_lo == 1.0 && spec.weight_hi == 1.0) {
            data.persons[i].weight = 1;
        } else {
            RngStream rng(spec.seed, static_cast<std::uint32_t>(i), 0, 0,
                          StreamPurpose::SimWeight);
            data.persons[i].weight =
                static_cast<real>(rng.uniform(spec.weight_lo, spec.weight_hi));
        }
    }

    // item assignment: t distinct items per person
    const int t = spec.responses_per_person;
    std::vector<double> zipf_cum;
    if (spec.zipf) {
        zipf_cum.resize(ni);
        double acc = 0.0;
        for (int j = 0; j < ni; ++j) {
            acc += 1.0 / std::pow(static_cast<double>(j + 1), spec.zipf_exponent);
            zipf_cum[j] = acc;
        }
    }
    std::vector<int> pool(ni);
    for (int i = 0; i < np; ++i) {
        RngStream rng(spec.seed, static_cast<std::uint32_t>(i), 2, 0, StreamPurpose::SimAssign);
        std::vector<int> chosen;
        chosen.reserve(t);
        if (spec.zipf) {
            std::unordered_set<int> used;
            const double total = zipf_cum.back();
            while (static_cast<int>(chosen.size()) < t) {
                const double u = rng.uniform() * total;
                const int j = static_cast<int>(
                    std::lower_bound(zipf_cum.begin(), zipf_cum.end(), u) - zipf_cum.begin());
                if (used.insert(std::min(j, ni - 1)).second) {
                    chosen.push_back(std::min(j, ni - 1));
                }
            }
        } else {
            std::iota(pool.begin(), pool.end(), 0);
            for (int k = 0; k < t; ++k) {
                const int pick =
                    k + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(ni - k)));
                std::swap(pool[k], pool[pick]);
                chosen.push_back(pool[k]);
            }
        }
        std::sort(chosen.begin(), chosen.end());
        for (int j : chosen) {
            ResponseRecord r;
            r.obs_index = static_cast<int>(data.responses.size());
            r.person_index = i;
            r.item_index = j;
            data.responses.push_back(r);
        }
    }

    // responses from the family likelihoods
    for (auto& r : data.responses) {
        const Unit& item = data.items[r.item_index];
        const BlockSpec& bs = data.block_of(Side::Item, item.block_id);
        const Vector nat = to_natural(bs.family, item.latent);
        const double theta = data.persons[r.person_index].latent[item_pdim[r.item_index]];
        RngStream rng(spec.seed, static_cast<std::uint32_t>(r.obs_index), 3, 0,
                      StreamPurpose::SimResponse);
        r.value = static_cast<real>(sample_response(bs.family, nat, theta, rng));
    }

    // unit truth rows
    for (int i = 0; i < np; ++i) {
        const int K = data.block_of(Side::Person, data.persons[i].block_id).dim_K;
        for (int k = 0; k < K; ++k) {
            const std::string param = "dim" + std::to_string(k + 1);
            out.truth.push_back({"person" + std::to_string(i + 1) + "." + param,
                                 data.person_ids[i], param, data.persons[i].latent[k]});
        }
    }
    for (int j = 0; j < ni; ++j) {
        const BlockSpec& bs = data.block_of(Side::Item, data.items[j].block_id);
        const Vector nat = to_natural(bs.family, data.items[j].latent);
        const auto names = bs.family.param_names();
        for (int k = 0; k < bs.dim_K; ++k) {
            out.truth.push_back({"item" + std::to_string(j + 1) + "." + names[k],
                                 data.item_ids[j], names[k], nat[k]});
        }
    }
    return out;
}

void write_sim_outputs(const std::string& dir, const SimResult& result) {
    fs::create_directories(dir);
    const Dataset& data = result.data;

    bool weighted = false;
    for (const auto& p : data.persons) weighted |= (p.weight != 1);

    {
        std::ofstream out(fs::path(dir) / "responses.csv");
        out << "person_id,item_id,response";
        if (weighted) out << ",weight";
        out << '\n';
        for (const auto& r : data.responses) {
            out << csv_escape(data.person_ids[r.person_index]) << ','
                << csv_escape(data.item_ids[r.item_index]) << ','
                << fmt17(static_cast<double>(r.value));
            if (weighted) out << ',' << fmt17(static_cast<double>(data.persons[r.person_index].weight));
            out << '\n';
        }
    }

    auto write_block_features = [&](const BlockSpec& bs) {
        const auto& units = (bs.side == Side::Person) ? data.persons : data.items;
        const auto& ids = (bs.side == Side::Person) ? data.person_ids : data.item_ids;
        // skip intercept-only blocks; the calibration default regenerates it
        if (bs.feature_count_p <= 1) return;
        std::ofstream out(fs::path(dir) / ("block" + std::to_string(bs.block_id) +
                                           "_features.csv"));
        out << "unit_id";
        // the leading intercept column is implicit at calibration time
        const int first = 1;
        for (int c = first; c < bs.feature_count_p; ++c) out << ",x" << (c - first + 1);
        out << '\n';
        for (int u : bs.unit_ids) {
            out << csv_escape(ids[u]);
            for (int c = first; c < bs.feature_count_p; ++c) {
                out << ',' << fmt17(static_cast<double>(units[u].features[c]));
            }
            out << '\n';
        }
    };
    for (const auto& bs : data.person_blocks) write_block_features(bs);
    for (const auto& bs : data.item_blocks) write_block_features(bs);

    {
        std::ofstream out(fs::path(dir) / "truth.csv");
        out << "name,unit_id,param,value\n";
        for (const auto& row : result.truth) {
            out << csv_escape(row.name) << ',' << csv_escape(row.unit_id) << ','
                << csv_escape(row.param) << ',' << fmt17(row.value) << '\n';
        }
    }
}

SimSpec load_sim_spec(const std::string& config_path) {
    const toml::Value root = toml::parse_file(config_path);
    const std::string base = fs::path(config_path).has_parent_path()
                                 ? fs::path(config_path).parent_path().string()
                                 : ".";
    SimSpec spec;

    const toml::Value* sim = toml::find(root, "sim");
    if (!sim) throw ValidationError("sim config: missing [sim] section");
    spec.seed = static_cast<std::uint64_t>(toml::get_num(*sim, "seed", 0));
    spec.responses_per_person =
        static_cast<int>(toml::get_num(*sim, "responses_per_person", 10));
    const std::string assignment = toml::get_str(*sim, "assignment", "uniform");
    if (assignment == "zipf") {
        spec.zipf = true;
        spec.zipf_exponent = toml::get_num(*sim, "zipf_exponent", 1.0);
    } else if (assignment != "uniform") {
        throw ValidationError("sim: assignment must be 'uniform' or 'zipf'");
    }
    if (const toml::Value* w = toml::find(*sim, "weights")) {
        if (w->type != toml::Value::Type::Array || w->arr.size() != 2) {
            throw ValidationError("sim: weights must be [lo, hi]");
        }
        spec.weight_lo = w->arr[0].num;
        spec.weight_hi = w->arr[1].num;
    }

    const toml::Value* blocks = toml::find(root, "block");
    if (!blocks) throw ValidationError("sim config: at least one [block.N] is required");
    for (const auto& [key, tab] : blocks->tab) {
        SimBlock b;
        try {
            b.id = std::stoi(key);
        } catch (...) {
            throw ValidationError("sim config: block id '" + key + "' must be an integer");
        }
        const std::string side = toml::get_str(tab, "side", "");
        if (side == "person") {
            b.side = Side::Person;
            b.dim = static_cast<int>(toml::get_num(tab, "dim", 1));
        } else if (side == "item") {
            b.side = Side::Item;
            const std::string fam = toml::get_str(tab, "family", "");
            if (fam.empty()) {
                throw ValidationError("sim block " + key + ": item blocks require a family");
            }
            b.family = ItemFamily::from_name(
                fam, static_cast<int>(toml::get_num(tab, "categories", 0)));
            b.person_dim = static_cast<int>(toml::get_num(tab, "person_dim", 1)) - 1;
        } else {
            throw ValidationError("sim block " + key + ": side must be 'person' or 'item'");
        }
        b.count = static_cast<int>(toml::get_num(tab, "count", 0));
        b.n_features = static_cast<int>(toml::get_num(tab, "features", 0));
        b.intercept = toml::get_bool(tab, "intercept", true);
        const std::string ff = toml::get_str(tab, "features_file", "");
        if (!ff.empty()) {
            b.features_path = (fs::path(ff).is_absolute() ? ff : (fs::path(base) / ff).string());
        }

        const int K = (b.side == Side::Person) ? b.dim : b.family.param_count();
        const int p = b.n_features + (b.intercept ? 1 : 0);
        if (const toml::Value* v = toml::find(tab, "true_B")) {
            b.true_B = toml::get_matrix(*v, "true_B", p, K);
        }
        if (toml::find(tab, "true_S")) b.true_S = toml::get_vector(tab, "true_S", K, 1.0);
        if (const toml::Value* v = toml::find(tab, "true_R")) {
            if (v->type == toml::Value::Type::String) {
                if (v->str == "identity") {
                    b.true_R = Matrix::Identity(K, K);
                } else if (v->str == "lkj") {
                    b.lkj_R = true;
                    b.lkj_eta = toml::get_num(tab, "eta", 1.0);
                } else {
                    throw ValidationError("sim block " + key +
                                          ": true_R must be 'identity', 'lkj', or a matrix");
                }
            } else {
                b.true_R = toml::get_matrix(*v, "true_R", K, K);
            }
        }
        spec.blocks.push_back(std::move(b));
    }
    spec.check();
    return spec;
}

}  // namespace spice
