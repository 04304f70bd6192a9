#include "spice/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "spice/errors.hpp"

namespace spice {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Deterministic work partition: f(i) for i in [0,n). Writes of distinct
// i never alias, and all randomness is counter-based, so the result does
// not depend on the partitioning.
template <class F>
void parallel_for(int n, int workers, F&& f) {
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
        const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
        pool.emplace_back([&, lo, hi]() {
            try {
                for (int i = lo; i < hi; ++i) f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

void SamplerConfig::check() const {
    if (M1 < 0 || M2 < 0 || M3 < 0) throw ValidationError("sampler: phase lengths must be >= 0");
    if (M4 < 1) throw ValidationError("sampler: M4 must be >= 1");
    if (!(0.0 < a0 && a0 < a_star && a_star < a1 && a1 < 1.0)) {
        throw ValidationError("sampler: need 0 < a0 < a_star < a1 < 1");
    }
    if (thin < 1) throw ValidationError("sampler: thin must be >= 1");
    if (n_chains < 1) throw ValidationError("sampler: n_chains must be >= 1");
    if (worker_count < 1) throw ValidationError("sampler: worker_count must be >= 1");
    if (!(init_proposal_sd > 0)) throw ValidationError("sampler: init_proposal_sd must be > 0");
}

Vector normalize_weights(const Vector& w) {
    int positive = 0;
    double sum = 0.0;
    for (int i = 0; i < w.size(); ++i) {
        if (w[i] < 0) throw ValidationError("weights must be nonnegative");
        if (w[i] > 0) ++positive;
        sum += w[i];
    }
    if (positive == 0) throw ValidationError("all person weights are zero");
    Vector out = w;
    const real scale = static_cast<real>(positive / sum);
    out *= scale;
    return out;
}

double adapt_factor5(double acc_rate, double a0, double a1, double sd) {
    if (acc_rate < a0) return sd / 5.0;
    if (acc_rate > a1) return sd * 5.0;
    return sd;
}

double adapt_interpolate(double sd2, double acc2, double sd3, double acc3, double a_star) {
    if (sd2 == sd3) return sd3;
    const double lo = std::min(sd2, sd3) / 5.0;
    const double hi = std::max(sd2, sd3) * 5.0;
    acc2 = std::clamp(acc2, 0.01, 0.99);
    acc3 = std::clamp(acc3, 0.01, 0.99);
    if (acc2 == acc3) return sd3;
    const double t = (logit(a_star) - logit(acc2)) / (logit(acc3) - logit(acc2));
    const double sd4 = std::exp(std::log(sd2) + t * (std::log(sd3) - std::log(sd2)));
    return std::clamp(sd4, lo, hi);
}

// --- model assembly -----------------------------------------------------

Model build_model(Dataset data, const std::map<int, BlockConfig>& config) {
    validate_dataset(data);
    if (data.person_blocks.empty() || data.item_blocks.empty()) {
        throw ValidationError("model needs at least one person and one item block");
    }
    for (size_t n = 0; n < data.responses.size(); ++n) {
        if (data.responses[n].obs_index != static_cast<int>(n)) {
            throw ValidationError("responses must be indexed contiguously by obs_index");
        }
    }

    Model m;
    m.linkage = build_linkage(data.responses, data);

    // normalized person weights
    Vector raw(data.persons.size());
    for (size_t i = 0; i < data.persons.size(); ++i) raw[i] = data.persons[i].weight;
    m.person_weight = normalize_weights(raw);
    for (size_t i = 0; i < data.persons.size(); ++i) {
        data.persons[i].weight = m.person_weight[i];
    }

    m.person_K = data.person_blocks.front().dim_K;

    // blocks in ascending block_id order, both sides mixed
    std::vector<const BlockSpec*> specs;
    for (const auto& b : data.person_blocks) specs.push_back(&b);
    for (const auto& b : data.item_blocks) specs.push_back(&b);
    std::sort(specs.begin(), specs.end(),
              [](const BlockSpec* a, const BlockSpec* b) { return a->block_id < b->block_id; });
    for (size_t i = 1; i < specs.size(); ++i) {
        if (specs[i]->block_id == specs[i - 1]->block_id) {
            throw ValidationError("block ids must be unique across sides (duplicate " +
                                  std::to_string(specs[i]->block_id) + ")");
        }
    }

    m.person_block_of.assign(data.persons.size(), -1);
    m.person_row.assign(data.persons.size(), -1);
    m.item_block_of.assign(data.items.size(), -1);
    m.item_row.assign(data.items.size(), -1);

    for (const BlockSpec* spec : specs) {
        BlockModel bm;
        bm.spec = *spec;
        bm.side = spec->side;
        bm.units = spec->unit_ids;
        const auto& units = (spec->side == Side::Person) ? data.persons : data.items;

        const int U = static_cast<int>(bm.units.size());
        if (U == 0) throw ValidationError("block " + std::to_string(spec->block_id) + " is empty");
        Matrix X0(U, spec->feature_count_p);
        Vector W(U);
        for (int r = 0; r < U; ++r) {
            const Unit& u = units[bm.units[r]];
            X0.row(r) = u.features.transpose();
            W[r] = (spec->side == Side::Person) ? m.person_weight[bm.units[r]] : real(1);
        }
        // full column rank required for the OLS step
        Eigen::ColPivHouseholderQR<Matrix> qr(X0);
        if (qr.rank() < spec->feature_count_p) {
            throw ValidationError("block " + std::to_string(spec->block_id) +
                                  ": feature matrix is rank deficient (rank " +
                                  std::to_string(qr.rank()) + " of " +
                                  std::to_string(spec->feature_count_p) + ")");
        }
        bm.design = BlockDesign::make(X0, W);

        const int p = spec->feature_count_p;
        const int K = spec->dim_K;
        auto cfg_it = config.find(spec->block_id);
        const BlockConfig* cfg = (cfg_it != config.end()) ? &cfg_it->second : nullptr;

        bm.prior = (cfg && cfg->prior.b0.size() > 0) ? cfg->prior : PriorSpec::vague(p, K);
        if (bm.prior.b0.size() != p * K) {
            throw ValidationError("block " + std::to_string(spec->block_id) +
                                  ": prior b0 length != p*K");
        }
        bm.prior.check();
        if (bm.prior.S_lower.size() != K) {
            throw ValidationError("block " + std::to_string(spec->block_id) +
                                  ": prior S bounds must have length K");
        }

        bm.init = RegressionParams::make(p, K);
        bm.init.S = real(0.5) * (bm.prior.S_lower + bm.prior.S_upper);
        if (cfg) {
            bm.person_dim = cfg->person_dim;
            if (spec->side == Side::Item && (cfg->person_dim < 0 || cfg->person_dim >= m.person_K)) {
                throw ValidationError("block " + std::to_string(spec->block_id) +
                                      ": person_dim out of range");
            }
            if (cfg->fix_B) {
                if (cfg->B_value.rows() != p || cfg->B_value.cols() != K) {
                    throw ValidationError("block " + std::to_string(spec->block_id) +
                                          ": fixed B has wrong shape");
                }
                bm.init.B = cfg->B_value;
                bm.init.fixed_B.setConstant(true);
            }
            if (cfg->fix_S) {
                if (cfg->S_value.size() != K) {
                    throw ValidationError("block " + std::to_string(spec->block_id) +
                                          ": fixed S has wrong length");
                }
                for (int k = 0; k < K; ++k) {
                    if (!(cfg->S_value[k] >= bm.prior.S_lower[k] &&
                          cfg->S_value[k] <= bm.prior.S_upper[k])) {
                        throw ValidationError("block " + std::to_string(spec->block_id) +
                                              ": fixed S outside the prior bounds");
                    }
                }
                bm.init.S = cfg->S_value;
                bm.init.fixed_S.setConstant(true);
            }
            if (cfg->fix_R) {
                if (cfg->R_value.rows() != K || cfg->R_value.cols() != K) {
                    throw ValidationError("block " + std::to_string(spec->block_id) +
                                          ": fixed R has wrong shape");
                }
                Eigen::LLT<Matrix> llt(cfg->R_value);
                if (llt.info() != Eigen::Success) {
                    throw ValidationError("block " + std::to_string(spec->block_id) +
                                          ": fixed R is not positive definite");
                }
                bm.init.L = llt.matrixL();
                bm.init.fixed_R = true;
            }
        }
        if (K == 1) bm.init.fixed_R = true;  // R == 1 structurally

        const int pos = static_cast<int>(m.blocks.size());
        for (int r = 0; r < U; ++r) {
            if (spec->side == Side::Person) {
                m.person_block_of[bm.units[r]] = pos;
                m.person_row[bm.units[r]] = r;
            } else {
                m.item_block_of[bm.units[r]] = pos;
                m.item_row[bm.units[r]] = r;
            }
        }
        m.blocks.push_back(std::move(bm));
    }

    // flat item-latent layout
    m.item_offset.assign(data.items.size(), 0);
    int off = 0;
    for (size_t j = 0; j < data.items.size(); ++j) {
        m.item_offset[j] = off;
        off += m.blocks[m.item_block_of[j]].spec.dim_K;
    }
    m.item_flat = off;

    // parameter table: regression entries per block, then persons, then items
    ParamTable& table = m.params;
    int slot = 0;
    for (size_t pos = 0; pos < m.blocks.size(); ++pos) {
        const BlockModel& bm = m.blocks[pos];
        const int id = bm.spec.block_id;
        const int p = bm.spec.feature_count_p;
        const int K = bm.spec.dim_K;
        for (int c = 0; c < K; ++c) {
            for (int r = 0; r < p; ++r) {
                if (bm.init.fixed_B[c * p + r]) continue;
                ParamEntry e;
                e.kind = ParamEntry::Kind::RegB;
                e.block_pos = static_cast<int>(pos);
                e.i = r;
                e.j = c;
                e.name = "block" + std::to_string(id) + ".B[" + std::to_string(r + 1) + "," +
                         std::to_string(c + 1) + "]";
                table.entries.push_back(std::move(e));
            }
        }
        for (int k = 0; k < K; ++k) {
            if (bm.init.fixed_S[k]) continue;
            ParamEntry e;
            e.kind = ParamEntry::Kind::RegS;
            e.block_pos = static_cast<int>(pos);
            e.i = k;
            e.name = "block" + std::to_string(id) + ".S[" + std::to_string(k + 1) + "]";
            e.mh_slot = slot++;
            table.entries.push_back(std::move(e));
        }
        if (!bm.init.fixed_R && K >= 2) {
            for (int i = 1; i < K; ++i) {
                for (int j = 0; j < i; ++j) {
                    ParamEntry e;
                    e.kind = ParamEntry::Kind::RegR;
                    e.block_pos = static_cast<int>(pos);
                    e.i = i;
                    e.j = j;
                    e.name = "block" + std::to_string(id) + ".R[" + std::to_string(i + 1) + "," +
                             std::to_string(j + 1) + "]";
                    e.mh_slot = slot++;
                    table.entries.push_back(std::move(e));
                }
            }
        }
    }
    for (size_t i = 0; i < data.persons.size(); ++i) {
        if (data.persons[i].fixed) continue;
        for (int k = 0; k < m.person_K; ++k) {
            ParamEntry e;
            e.kind = ParamEntry::Kind::Person;
            e.unit = static_cast<int>(i);
            e.block_pos = m.person_block_of[i];
            e.i = m.person_row[i];
            e.j = k;
            e.name = "person" + std::to_string(i + 1) + ".dim" + std::to_string(k + 1);
            e.mh_slot = slot++;
            table.entries.push_back(std::move(e));
        }
    }
    for (size_t j = 0; j < data.items.size(); ++j) {
        if (data.items[j].fixed) continue;
        const BlockModel& bm = m.blocks[m.item_block_of[j]];
        const auto names = bm.spec.family.param_names();
        for (int k = 0; k < bm.spec.dim_K; ++k) {
            ParamEntry e;
            e.kind = ParamEntry::Kind::Item;
            e.unit = static_cast<int>(j);
            e.block_pos = m.item_block_of[j];
            e.i = m.item_row[j];
            e.j = k;
            e.name = "item" + std::to_string(j + 1) + "." + names[k];
            e.mh_slot = slot++;
            table.entries.push_back(std::move(e));
        }
    }
    table.mh_count = slot;

    m.data = std::move(data);
    return m;
}

void ChainState::reset_counters() {
    std::fill(accepts.begin(), accepts.end(), 0);
    std::fill(attempts.begin(), attempts.end(), 0);
}

// --- sampler --------------------------------------------------------------

GibbsSampler::GibbsSampler(const Model& model, SamplerConfig config)
    : model_(model), config_(config) {
    config_.check();

    mh_slot_person_.assign(model_.data.persons.size(), -1);
    mh_slot_item_.assign(model_.data.items.size(), -1);
    block_r_slot0_.assign(model_.blocks.size(), -1);
    block_s_slots_.assign(model_.blocks.size(), {});
    for (size_t pos = 0; pos < model_.blocks.size(); ++pos) {
        block_s_slots_[pos].assign(model_.blocks[pos].spec.dim_K, -1);
    }
    for (const auto& e : model_.params.entries) {
        if (e.kind == ParamEntry::Kind::Person && e.j == 0) mh_slot_person_[e.unit] = e.mh_slot;
        if (e.kind == ParamEntry::Kind::Item && e.j == 0) mh_slot_item_[e.unit] = e.mh_slot;
        if (e.kind == ParamEntry::Kind::RegR && e.i == 1 && e.j == 0) {
            block_r_slot0_[e.block_pos] = e.mh_slot;
        }
        if (e.kind == ParamEntry::Kind::RegS) block_s_slots_[e.block_pos][e.i] = e.mh_slot;
    }
}

void GibbsSampler::refresh_caches(const ChainState& state) const {
    const auto& items = model_.data.items;
    item_nat_.resize(model_.item_flat);
    for (size_t j = 0; j < items.size(); ++j) {
        const BlockModel& bm = model_.blocks[model_.item_block_of[j]];
        const int K = bm.spec.dim_K;
        const Eigen::Map<const Vector> psi(state.item_lat.data() + model_.item_offset[j], K);
        const Vector nat = to_natural(bm.spec.family, psi);
        std::copy(nat.data(), nat.data() + K, item_nat_.begin() + model_.item_offset[j]);
    }
    prior_mean_.resize(model_.blocks.size());
    for (size_t pos = 0; pos < model_.blocks.size(); ++pos) {
        prior_mean_[pos] = model_.blocks[pos].design.X0 * state.reg[pos].B;
    }
}

double GibbsSampler::unit_log_target_cached(const ChainState& state, Side side, int unit_index,
                                            const Vector& latent,
                                            const Matrix& prior_mean) const {
    const int pos = (side == Side::Person) ? model_.person_block_of[unit_index]
                                           : model_.item_block_of[unit_index];
    const int row = (side == Side::Person) ? model_.person_row[unit_index]
                                           : model_.item_row[unit_index];
    const BlockModel& bm = model_.blocks[pos];
    const RegressionParams& rp = state.reg[pos];

    double ll = 0.0;
    try {
        if (side == Side::Person) {
            for (const auto& link : model_.linkage.of_person(unit_index)) {
                const int j = link.partner;
                const BlockModel& ib = model_.blocks[model_.item_block_of[j]];
                const Eigen::Map<const Vector> nat(item_nat_.data() + model_.item_offset[j],
                                                   ib.spec.dim_K);
                ll += log_likelihood(ib.spec.family, nat, latent[ib.person_dim],
                                     model_.data.responses[link.obs].value);
            }
        } else {
            const Vector nat = to_natural(bm.spec.family, latent);
            for (const auto& link : model_.linkage.of_item(unit_index)) {
                const int i = link.partner;
                const double w = model_.person_weight[i];
                if (w == 0.0) continue;
                ll += w * log_likelihood(bm.spec.family, nat,
                                         state.person_lat(i, bm.person_dim),
                                         model_.data.responses[link.obs].value);
            }
        }
    } catch (const std::domain_error&) {
        // proposal escaped the admissible region via overflow/underflow
        return -std::numeric_limits<double>::infinity();
    }
    const Vector mu = prior_mean.row(row).transpose();
    return ll + mvn_logpdf(latent, mu, rp.S, rp.L);
}

double GibbsSampler::unit_log_target(const ChainState& state, Side side, int unit_index,
                                     const Vector& latent) const {
    refresh_caches(state);
    const int pos = (side == Side::Person) ? model_.person_block_of[unit_index]
                                           : model_.item_block_of[unit_index];
    return unit_log_target_cached(state, side, unit_index, latent, prior_mean_[pos]);
}

std::vector<bool> GibbsSampler::update_unit(ChainState& state, Side side, int unit_index,
                                            RngStream& rng) const {
    const int pos = (side == Side::Person) ? model_.person_block_of[unit_index]
                                           : model_.item_block_of[unit_index];
    const BlockModel& bm = model_.blocks[pos];
    const int K = bm.spec.dim_K;
    const int slot0 = (side == Side::Person) ? mh_slot_person_[unit_index]
                                             : mh_slot_item_[unit_index];
    const Matrix& prior_mean = prior_mean_[pos];

    Vector cur(K);
    if (side == Side::Person) {
        cur = state.person_lat.row(unit_index).transpose();
    } else {
        cur = Eigen::Map<const Vector>(state.item_lat.data() + model_.item_offset[unit_index], K);
    }

    std::vector<bool> flags(K, false);
    double cur_t = unit_log_target_cached(state, side, unit_index, cur, prior_mean);
    for (int k = 0; k < K; ++k) {
        Vector prop = cur;
        prop[k] += static_cast<real>(state.sds[slot0 + k] * rng.normal());
        const double prop_t = unit_log_target_cached(state, side, unit_index, prop, prior_mean);
        const double log_u = std::log(rng.uniform());
        ++state.attempts[slot0 + k];
        if (log_u < prop_t - cur_t) {
            cur = prop;
            cur_t = prop_t;
            ++state.accepts[slot0 + k];
            flags[k] = true;
        }
    }

    if (side == Side::Person) {
        state.person_lat.row(unit_index) = cur.transpose();
    } else {
        Eigen::Map<Vector>(state.item_lat.data() + model_.item_offset[unit_index], K) = cur;
    }
    return flags;
}

void GibbsSampler::update_units_pass(ChainState& state, Side side, int chain) const {
    const auto& units = (side == Side::Person) ? model_.data.persons : model_.data.items;
    const int entity_base = (side == Side::Person) ? 0 : static_cast<int>(model_.data.persons.size());
    for (const auto& bm : model_.blocks) {
        if (bm.side != side) continue;
        const int U = static_cast<int>(bm.units.size());
        parallel_for(U, config_.worker_count, [&](int r) {
            const int u = bm.units[r];
            if (units[u].fixed) return;
            RngStream rng(config_.seed, static_cast<std::uint32_t>(entity_base + u),
                          static_cast<std::uint32_t>(state.iteration),
                          static_cast<std::uint32_t>(chain), StreamPurpose::Unit);
            update_unit(state, side, u, rng);
        });
    }
}

void GibbsSampler::regression_pass(ChainState& state, int chain) const {
    for (size_t pos = 0; pos < model_.blocks.size(); ++pos) {
        const BlockModel& bm = model_.blocks[pos];
        RegressionParams& rp = state.reg[pos];
        const int id = bm.spec.block_id;
        const int U = static_cast<int>(bm.units.size());
        const int K = bm.spec.dim_K;

        try {
            // gather the block's unit matrix from the chain state
            Matrix units(U, K);
            for (int r = 0; r < U; ++r) {
                const int u = bm.units[r];
                if (bm.side == Side::Person) {
                    units.row(r) = state.person_lat.row(u);
                } else {
                    units.row(r) = Eigen::Map<const Vector>(
                        state.item_lat.data() + model_.item_offset[u], K).transpose();
                }
            }

            {
                RngStream rng(config_.seed, static_cast<std::uint32_t>(id),
                              static_cast<std::uint32_t>(state.iteration),
                              static_cast<std::uint32_t>(chain), StreamPurpose::RegB);
                rp.B = sample_B(units, bm.design, rp.S, rp.L, rp.B, rp.fixed_B, bm.prior, rng);
            }

            // E depends only on B and the units; reused across the R/S sweep
            const Matrix EtWE = residual_crossprod(units, bm.design, rp.B);
            const real U_eff = bm.design.U_eff;

            if (!rp.fixed_R && K >= 2) {
                const int nc = K * (K - 1) / 2;
                std::vector<double> sds(nc);
                const int slot0 = block_r_slot0_[pos];
                for (int c = 0; c < nc; ++c) sds[c] = state.sds[slot0 + c];
                RngStream rng(config_.seed, static_cast<std::uint32_t>(id),
                              static_cast<std::uint32_t>(state.iteration),
                              static_cast<std::uint32_t>(chain), StreamPurpose::RegR);
                const auto flags = update_R(rp, EtWE, U_eff, bm.prior, sds, rng);
                for (int c = 0; c < nc; ++c) {
                    ++state.attempts[slot0 + c];
                    if (flags[c]) ++state.accepts[slot0 + c];
                }
            }

            bool any_free_s = false;
            for (int k = 0; k < K; ++k) any_free_s |= !rp.fixed_S[k];
            if (any_free_s) {
                std::vector<double> sds(K, 1.0);
                const std::vector<int>& slots = block_s_slots_[pos];
                for (int k = 0; k < K; ++k) {
                    if (slots[k] >= 0) sds[k] = state.sds[slots[k]];
                }
                RngStream rng(config_.seed, static_cast<std::uint32_t>(id),
                              static_cast<std::uint32_t>(state.iteration),
                              static_cast<std::uint32_t>(chain), StreamPurpose::RegS);
                const auto flags = update_S(rp, EtWE, U_eff, bm.prior, sds, rng);
                for (int k = 0; k < K; ++k) {
                    if (slots[k] < 0) continue;
                    ++state.attempts[slots[k]];
                    if (flags[k]) ++state.accepts[slots[k]];
                }
            }
        } catch (const NumericalError& e) {
            throw NumericalError("iteration " + std::to_string(state.iteration) + ", block " +
                                 std::to_string(id) + ": " + e.what());
        }
    }
}

void GibbsSampler::gibbs_iteration(ChainState& state, int chain) const {
    refresh_caches(state);
    update_units_pass(state, Side::Person, chain);
    update_units_pass(state, Side::Item, chain);
    // item latents changed: refresh the natural-scale cache once for the
    // regression pass, likelihood pass, and the next person sweep
    const auto& items = model_.data.items;
    for (size_t j = 0; j < items.size(); ++j) {
        const BlockModel& bm = model_.blocks[model_.item_block_of[j]];
        const int K = bm.spec.dim_K;
        const Eigen::Map<const Vector> psi(state.item_lat.data() + model_.item_offset[j], K);
        const Vector nat = to_natural(bm.spec.family, psi);
        std::copy(nat.data(), nat.data() + K, item_nat_.begin() + model_.item_offset[j]);
    }
    regression_pass(state, chain);
    ++state.iteration;
}

ChainState GibbsSampler::initial_state(int chain) const {
    const auto& data = model_.data;
    ChainState st;
    st.reg.reserve(model_.blocks.size());
    for (const auto& bm : model_.blocks) st.reg.push_back(bm.init);
    st.sds.assign(model_.params.mh_count, config_.init_proposal_sd);
    st.accepts.assign(model_.params.mh_count, 0);
    st.attempts.assign(model_.params.mh_count, 0);

    const int np = static_cast<int>(data.persons.size());
    const int ni = static_cast<int>(data.items.size());
    st.person_lat = Matrix::Zero(np, model_.person_K);
    st.item_lat.assign(model_.item_flat, 0);

    auto draw_person = [&](int i, int attempt) {
        RngStream rng(config_.seed, static_cast<std::uint32_t>(i),
                      static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(chain),
                      StreamPurpose::Init);
        for (int k = 0; k < model_.person_K; ++k) {
            st.person_lat(i, k) = static_cast<real>(rng.normal());
        }
    };
    auto draw_item = [&](int j, int attempt) {
        RngStream rng(config_.seed, static_cast<std::uint32_t>(np + j),
                      static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(chain),
                      StreamPurpose::Init);
        const BlockModel& bm = model_.blocks[model_.item_block_of[j]];
        const RegressionParams& rp = st.reg[model_.item_block_of[j]];
        const int K = bm.spec.dim_K;
        const Vector mu = rp.B.transpose() * data.items[j].features;
        for (int k = 0; k < K; ++k) {
            st.item_lat[model_.item_offset[j] + k] =
                static_cast<real>(mu[k] + rp.S[k] * rng.normal());
        }
    };

    for (int i = 0; i < np; ++i) {
        if (data.persons[i].fixed) {
            st.person_lat.row(i) = data.persons[i].latent.transpose();
        } else {
            draw_person(i, 0);
        }
    }
    for (int j = 0; j < ni; ++j) {
        if (data.items[j].fixed) {
            Eigen::Map<Vector>(st.item_lat.data() + model_.item_offset[j],
                               data.items[j].latent.size()) = data.items[j].latent;
        } else {
            draw_item(j, 0);
        }
    }

    // re-draw any unit whose local log target is not finite
    std::vector<int> attempt_p(np, 0), attempt_i(ni, 0);
    for (int round = 0; round < 101; ++round) {
        refresh_caches(st);
        std::vector<std::pair<Side, int>> offending;
        for (int i = 0; i < np; ++i) {
            if (data.persons[i].fixed) continue;
            const Vector lat = st.person_lat.row(i).transpose();
            if (!std::isfinite(unit_log_target_cached(st, Side::Person, i, lat,
                                                      prior_mean_[model_.person_block_of[i]]))) {
                offending.emplace_back(Side::Person, i);
            }
        }
        for (int j = 0; j < ni; ++j) {
            if (data.items[j].fixed) continue;
            const BlockModel& bm = model_.blocks[model_.item_block_of[j]];
            const Eigen::Map<const Vector> lat(st.item_lat.data() + model_.item_offset[j],
                                               bm.spec.dim_K);
            if (!std::isfinite(unit_log_target_cached(st, Side::Item, j, lat,
                                                      prior_mean_[model_.item_block_of[j]]))) {
                offending.emplace_back(Side::Item, j);
            }
        }
        if (offending.empty()) break;
        for (const auto& [side, u] : offending) {
            int& attempts = (side == Side::Person) ? attempt_p[u] : attempt_i[u];
            if (++attempts > 100) {
                throw NumericalError(
                    "initialization: log posterior not finite after 100 retries for " +
                    std::string(side == Side::Person ? "person " : "item ") +
                    std::to_string(u + 1) + " (chain " + std::to_string(chain + 1) + ")");
            }
            if (side == Side::Person) {
                draw_person(u, attempts);
            } else {
                draw_item(u, attempts);
            }
        }
    }
    return st;
}

Vector GibbsSampler::snapshot_values(const ChainState& state) const {
    // natural-scale item parameters for reporting
    const auto& items = model_.data.items;
    item_nat_.resize(model_.item_flat);
    for (size_t j = 0; j < items.size(); ++j) {
        const BlockModel& bm = model_.blocks[model_.item_block_of[j]];
        const int K = bm.spec.dim_K;
        const Eigen::Map<const Vector> psi(state.item_lat.data() + model_.item_offset[j], K);
        const Vector nat = to_natural(bm.spec.family, psi);
        std::copy(nat.data(), nat.data() + K, item_nat_.begin() + model_.item_offset[j]);
    }
    std::vector<Matrix> corr(model_.blocks.size());

    Vector out(model_.params.entries.size());
    for (size_t idx = 0; idx < model_.params.entries.size(); ++idx) {
        const ParamEntry& e = model_.params.entries[idx];
        switch (e.kind) {
            case ParamEntry::Kind::RegB:
                out[idx] = state.reg[e.block_pos].B(e.i, e.j);
                break;
            case ParamEntry::Kind::RegS:
                out[idx] = state.reg[e.block_pos].S[e.i];
                break;
            case ParamEntry::Kind::RegR: {
                Matrix& R = corr[e.block_pos];
                if (R.size() == 0) R = state.reg[e.block_pos].correlation();
                out[idx] = R(e.i, e.j);
                break;
            }
            case ParamEntry::Kind::Person:
                out[idx] = state.person_lat(e.unit, e.j);
                break;
            case ParamEntry::Kind::Item:
                out[idx] = item_nat_[model_.item_offset[e.unit] + e.j];
                break;
        }
    }
    return out;
}

Vector GibbsSampler::pointwise_loglik(const ChainState& state) const {
    const auto& responses = model_.data.responses;
    Vector out(responses.size());
    parallel_for(static_cast<int>(responses.size()), config_.worker_count, [&](int n) {
        const ResponseRecord& r = responses[n];
        const BlockModel& bm = model_.blocks[model_.item_block_of[r.item_index]];
        const Eigen::Map<const Vector> nat(item_nat_.data() + model_.item_offset[r.item_index],
                                           bm.spec.dim_K);
        out[n] = static_cast<real>(log_likelihood(
            bm.spec.family, nat, state.person_lat(r.person_index, bm.person_dim), r.value));
    });
    return out;
}

std::vector<PosteriorSamples> GibbsSampler::run(const ProgressFn& progress) const {
    std::vector<PosteriorSamples> results;
    results.reserve(config_.n_chains);

    // slot groups for the progress summary
    std::vector<char> group(model_.params.mh_count, 2);
    for (const auto& e : model_.params.entries) {
        if (e.mh_slot < 0) continue;
        if (e.kind == ParamEntry::Kind::Person) group[e.mh_slot] = 0;
        else if (e.kind == ParamEntry::Kind::Item) group[e.mh_slot] = 1;
    }

    for (int chain = 0; chain < config_.n_chains; ++chain) {
        ChainState st = initial_state(chain);

        auto emit = [&](int phase, int it, int total, const ChainState& s) {
            if (!progress) return;
            ProgressEvent ev;
            ev.chain = chain + 1;
            ev.phase = phase;
            ev.iteration = it;
            ev.phase_total = total;
            double acc[3] = {0, 0, 0};
            std::int64_t att[3] = {0, 0, 0};
            for (int m = 0; m < model_.params.mh_count; ++m) {
                acc[static_cast<int>(group[m])] += static_cast<double>(s.accepts[m]);
                att[static_cast<int>(group[m])] += s.attempts[m];
            }
            ev.accept_person = att[0] ? acc[0] / static_cast<double>(att[0]) : 0.0;
            ev.accept_item = att[1] ? acc[1] / static_cast<double>(att[1]) : 0.0;
            ev.accept_regression = att[2] ? acc[2] / static_cast<double>(att[2]) : 0.0;
            progress(ev);
        };
        auto run_phase = [&](int phase, int iters, auto&& per_iteration) {
            st.phase = phase;
            st.reset_counters();
            const int step = std::max(1, iters / 10);
            for (int t = 0; t < iters; ++t) {
                gibbs_iteration(st, chain);
                per_iteration(t);
                if ((t + 1) % step == 0 || t + 1 == iters) emit(phase, t + 1, iters, st);
            }
        };
        auto noop = [](int) {};

        run_phase(1, config_.M1, noop);
        run_phase(2, config_.M2, noop);

        const std::vector<double> sd2 = st.sds;
        std::vector<double> acc2(model_.params.mh_count, 0.0);
        for (int m = 0; m < model_.params.mh_count; ++m) {
            if (st.attempts[m] > 0) {
                acc2[m] = static_cast<double>(st.accepts[m]) / static_cast<double>(st.attempts[m]);
                st.sds[m] = adapt_factor5(acc2[m], config_.a0, config_.a1, st.sds[m]);
            }
        }

        run_phase(3, config_.M3, noop);

        for (int m = 0; m < model_.params.mh_count; ++m) {
            if (st.attempts[m] > 0 && st.sds[m] != sd2[m]) {
                const double acc3 =
                    static_cast<double>(st.accepts[m]) / static_cast<double>(st.attempts[m]);
                st.sds[m] = adapt_interpolate(sd2[m], acc2[m], st.sds[m], acc3, config_.a_star);
            }
        }

        PosteriorSamples out;
        out.param_names.reserve(model_.params.entries.size());
        for (const auto& e : model_.params.entries) out.param_names.push_back(e.name);
        const int stored = config_.M4 / config_.thin;
        out.draws.resize(stored, static_cast<Eigen::Index>(model_.params.entries.size()));
        out.moments.assign(model_.params.entries.size(), Moments{});
        out.loglik.reset(static_cast<int>(model_.data.responses.size()));
        if (config_.debug_store_all) {
            out.debug_trace.resize(config_.M4,
                                   static_cast<Eigen::Index>(model_.params.entries.size()));
        }

        int row = 0;
        run_phase(4, config_.M4, [&](int t) {
            const Vector values = snapshot_values(st);
            for (size_t idx = 0; idx < model_.params.entries.size(); ++idx) {
                out.moments[idx].add(static_cast<double>(values[idx]));
            }
            out.loglik.add_draw(pointwise_loglik(st));
            if ((t + 1) % config_.thin == 0 && row < stored) {
                out.draws.row(row++) = values.transpose();
            }
            if (config_.debug_store_all) out.debug_trace.row(t) = values.transpose();
        });

        out.accepts4 = st.accepts;
        out.attempts4 = st.attempts;
        out.final_sds = st.sds;
        results.push_back(std::move(out));
    }
    return results;
}

}  // namespace spice
