#include "spice/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "spice/rng.hpp"

namespace spice {

namespace {
const double kNaN = std::numeric_limits<double>::quiet_NaN();
}

Moments Moments::merged(const Moments& a, const Moments& b) {
    if (a.count == 0) return b;
    if (b.count == 0) return a;
    Moments out;
    out.count = a.count + b.count;
    const double delta = b.mean - a.mean;
    out.mean = a.mean + delta * static_cast<double>(b.count) / static_cast<double>(out.count);
    out.m2 = a.m2 + b.m2 +
             delta * delta * static_cast<double>(a.count) * static_cast<double>(b.count) /
                 static_cast<double>(out.count);
    return out;
}

double gelman_rubin(const Matrix& draws, bool split) {
    Matrix work = draws;
    if (split) {
        const int m = static_cast<int>(draws.rows());
        const int half = static_cast<int>(draws.cols()) / 2;
        if (half < 2) throw std::invalid_argument("gelman_rubin: too few samples to split");
        Matrix s(2 * m, half);
        for (int c = 0; c < m; ++c) {
            s.row(2 * c) = draws.row(c).head(half);
            s.row(2 * c + 1) = draws.row(c).tail(half);
        }
        work = s;
    }
    const int m = static_cast<int>(work.rows());
    const int n = static_cast<int>(work.cols());
    if (m < 2) throw std::invalid_argument("gelman_rubin: need at least 2 chains");
    if (n < 2) throw std::invalid_argument("gelman_rubin: need at least 2 samples per chain");

    std::vector<Moments> mom(m);
    for (int c = 0; c < m; ++c) {
        for (int i = 0; i < n; ++i) mom[c].add(static_cast<double>(work(c, i)));
    }
    return gelman_rubin_from_moments(mom);
}

double gelman_rubin_from_moments(const std::vector<Moments>& chains) {
    const int m = static_cast<int>(chains.size());
    if (m < 2) throw std::invalid_argument("gelman_rubin: need at least 2 chains");
    const std::int64_t n = chains[0].count;
    for (const auto& c : chains) {
        if (c.count != n) throw std::invalid_argument("gelman_rubin: unequal chain lengths");
    }
    if (n < 2) throw std::invalid_argument("gelman_rubin: need at least 2 samples per chain");

    double w = 0.0;
    Moments between;
    for (const auto& c : chains) {
        w += c.variance();
        between.add(c.mean);
    }
    w /= m;
    if (!(w > 0.0)) return kNaN;
    const double b_over_n = between.variance();
    const double nn = static_cast<double>(n);
    return std::sqrt(((nn - 1.0) / nn * w + b_over_n) / w);
}

WaicResult waic(const Matrix& pointwise_loglik) {
    const int d = static_cast<int>(pointwise_loglik.rows());
    const int n = static_cast<int>(pointwise_loglik.cols());
    if (d < 2) throw std::invalid_argument("waic: need at least 2 draws");

    WaicResult out;
    for (int j = 0; j < n; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < d; ++i) mx = std::max(mx, static_cast<double>(pointwise_loglik(i, j)));
        double sum = 0.0;
        Moments mom;
        for (int i = 0; i < d; ++i) {
            const double ll = pointwise_loglik(i, j);
            if (!std::isfinite(ll)) throw std::invalid_argument("waic: non-finite log-likelihood");
            sum += std::exp(ll - mx);
            mom.add(ll);
        }
        const double lppd = mx + std::log(sum) - std::log(static_cast<double>(d));
        out.elpd += lppd - mom.variance();
        out.p_waic += mom.variance();
    }
    out.waic = -2.0 * out.elpd;
    return out;
}

void WaicAccumulator::reset(int n_obs) {
    lse_max_.assign(n_obs, -std::numeric_limits<double>::infinity());
    lse_sum_.assign(n_obs, 0.0);
    mean_.assign(n_obs, 0.0);
    m2_.assign(n_obs, 0.0);
    draws_ = 0;
}

void WaicAccumulator::add_draw(const Vector& loglik) {
    if (loglik.size() != static_cast<Eigen::Index>(lse_max_.size())) {
        throw std::invalid_argument("WaicAccumulator: observation count mismatch");
    }
    ++draws_;
    for (size_t n = 0; n < lse_max_.size(); ++n) {
        const double ll = loglik[static_cast<Eigen::Index>(n)];
        if (ll > lse_max_[n]) {
            lse_sum_[n] = lse_sum_[n] * std::exp(lse_max_[n] - ll) + 1.0;
            lse_max_[n] = ll;
        } else {
            lse_sum_[n] += std::exp(ll - lse_max_[n]);
        }
        const double d1 = ll - mean_[n];
        mean_[n] += d1 / static_cast<double>(draws_);
        m2_[n] += d1 * (ll - mean_[n]);
    }
}

WaicResult WaicAccumulator::result() const {
    if (draws_ < 2) throw std::invalid_argument("WaicAccumulator: need at least 2 draws");
    WaicResult out;
    for (size_t n = 0; n < lse_max_.size(); ++n) {
        const double lppd = lse_max_[n] + std::log(lse_sum_[n]) -
                            std::log(static_cast<double>(draws_));
        const double pw = m2_[n] / static_cast<double>(draws_ - 1);
        out.elpd += lppd - pw;
        out.p_waic += pw;
    }
    out.waic = -2.0 * out.elpd;
    return out;
}

void WaicAccumulator::merge(const WaicAccumulator& other) {
    if (other.n_obs() != n_obs()) {
        throw std::invalid_argument("WaicAccumulator: merge size mismatch");
    }
    for (size_t n = 0; n < lse_max_.size(); ++n) {
        // combine log-sum-exp parts
        if (other.lse_max_[n] > lse_max_[n]) {
            lse_sum_[n] = lse_sum_[n] * std::exp(lse_max_[n] - other.lse_max_[n]) +
                          other.lse_sum_[n];
            lse_max_[n] = other.lse_max_[n];
        } else if (other.lse_sum_[n] > 0.0) {
            lse_sum_[n] += other.lse_sum_[n] * std::exp(other.lse_max_[n] - lse_max_[n]);
        }
        Moments a{draws_, mean_[n], m2_[n]};
        Moments b{other.draws_, other.mean_[n], other.m2_[n]};
        const Moments m = Moments::merged(a, b);
        mean_[n] = m.mean;
        m2_[n] = m.m2;
    }
    draws_ += other.draws_;
}

WaicAccumulator::ObsState WaicAccumulator::obs_state(int n) const {
    return {lse_max_[n], lse_sum_[n], mean_[n], m2_[n], draws_};
}

void WaicAccumulator::load_obs_state(int n, const ObsState& s) {
    lse_max_[n] = s.lse_max;
    lse_sum_[n] = s.lse_sum;
    mean_[n] = s.mean;
    m2_[n] = s.m2;
}

PppResult posterior_predictive_check(int n_draws, const ReplicateSimulator& simulate,
                                     const std::vector<real>& observed,
                                     const std::vector<Statistic>& statistics) {
    std::map<std::string, double> obs_stats;
    for (const auto& stat : statistics) {
        for (const auto& [name, value] : stat(observed)) obs_stats[name] = value;
    }

    std::map<std::string, int> ge_count;
    std::map<std::string, int> skipped;
    std::vector<real> replicate(observed.size());
    for (int d = 0; d < n_draws; ++d) {
        simulate(d, replicate);
        std::map<std::string, double> rep_stats;
        for (const auto& stat : statistics) {
            for (const auto& [name, value] : stat(replicate)) rep_stats[name] = value;
        }
        for (const auto& [name, obs_value] : obs_stats) {
            auto it = rep_stats.find(name);
            if (it == rep_stats.end()) {
                ++skipped[name];
            } else if (it->second >= obs_value) {
                ++ge_count[name];
            }
        }
    }

    PppResult out;
    out.skipped = skipped;
    for (const auto& [name, obs_value] : obs_stats) {
        (void)obs_value;
        const int miss = skipped.count(name) ? skipped.at(name) : 0;
        const int usable = n_draws - miss;
        if (usable > 0) {
            const int ge = ge_count.count(name) ? ge_count.at(name) : 0;
            out.ppp[name] = static_cast<double>(ge) / static_cast<double>(usable);
        }
    }
    return out;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return kNaN;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

std::vector<Statistic> builtin_ppc_statistics(const Dataset& data, const LinkageIndex& linkage,
                                              std::uint64_t seed, int max_odds_ratio_pairs) {
    std::vector<Statistic> stats;
    const int n_items = static_cast<int>(data.items.size());
    const int n_persons = static_cast<int>(data.persons.size());

    // observation lists per item / per person, captured by value
    auto item_obs = std::make_shared<std::vector<std::vector<int>>>(n_items);
    auto person_obs = std::make_shared<std::vector<std::vector<int>>>(n_persons);
    for (int j = 0; j < n_items; ++j) {
        for (const auto& e : linkage.of_item(j)) (*item_obs)[j].push_back(e.obs);
    }
    for (int i = 0; i < n_persons; ++i) {
        for (const auto& e : linkage.of_person(i)) (*person_obs)[i].push_back(e.obs);
    }

    stats.push_back([item_obs, n_items](const std::vector<real>& values) {
        std::map<std::string, double> out;
        for (int j = 0; j < n_items; ++j) {
            const auto& obs = (*item_obs)[j];
            if (obs.empty()) continue;
            double sum = 0.0;
            for (int n : obs) sum += values[n];
            out["item_mean[" + std::to_string(j + 1) + "]"] = sum / obs.size();
        }
        return out;
    });

    // per-item mean among the evaluated dataset's own bottom-quartile
    // scorers; recomputing the group per dataset keeps the statistic a pure
    // function of that dataset and avoids selection bias in the replicates
    {
        auto item_obs_person = std::make_shared<std::vector<std::vector<std::pair<int, int>>>>(
            n_items);
        for (int j = 0; j < n_items; ++j) {
            for (const auto& e : linkage.of_item(j)) {
                (*item_obs_person)[j].emplace_back(e.obs, e.partner);
            }
        }
        stats.push_back([person_obs, item_obs_person, n_persons,
                         n_items](const std::vector<real>& values) {
            std::vector<std::pair<double, int>> scored;
            for (int i = 0; i < n_persons; ++i) {
                if ((*person_obs)[i].empty()) continue;
                double s = 0.0;
                for (int n : (*person_obs)[i]) s += values[n];
                scored.emplace_back(s, i);
            }
            std::sort(scored.begin(), scored.end());
            std::vector<char> low(n_persons, 0);
            const size_t quartile = scored.size() / 4;
            for (size_t i = 0; i < quartile; ++i) low[scored[i].second] = 1;

            std::map<std::string, double> out;
            for (int j = 0; j < n_items; ++j) {
                double sum = 0.0;
                int count = 0;
                for (const auto& [n, person] : (*item_obs_person)[j]) {
                    if (low[person]) {
                        sum += values[n];
                        ++count;
                    }
                }
                if (count > 0) {
                    out["item_mean_low[" + std::to_string(j + 1) + "]"] = sum / count;
                }
            }
            return out;
        });
    }

    stats.push_back([person_obs, n_persons](const std::vector<real>& values) {
        std::vector<double> scores;
        scores.reserve(n_persons);
        for (int i = 0; i < n_persons; ++i) {
            if ((*person_obs)[i].empty()) continue;
            double s = 0.0;
            for (int n : (*person_obs)[i]) s += values[n];
            scores.push_back(s);
        }
        std::sort(scores.begin(), scores.end());
        std::map<std::string, double> out;
        for (int q : {10, 25, 50, 75, 90}) {
            out["person_score_q" + std::to_string(q)] =
                quantile_sorted(scores, static_cast<double>(q) / 100.0);
        }
        return out;
    });

    // sampled binary item pairs with enough common persons
    {
        std::vector<int> binary_items;
        for (int j = 0; j < n_items; ++j) {
            const ItemFamily& fam = data.family_of_item(j);
            if (fam.discrete() && fam.categories == 2) binary_items.push_back(j);
        }
        // person -> obs map per item for intersection
        std::vector<std::map<int, int>> by_person(n_items);
        for (int j : binary_items) {
            for (const auto& e : linkage.of_item(j)) by_person[j][e.partner] = e.obs;
        }
        struct Pair {
            int j1, j2;
            std::vector<std::pair<int, int>> obs;  // (obs at j1, obs at j2)
        };
        auto pairs = std::make_shared<std::vector<Pair>>();
        if (binary_items.size() >= 2 && max_odds_ratio_pairs > 0) {
            RngStream rng(seed, 0, 0, 0, StreamPurpose::Ppc);
            int attempts = 0;
            while (static_cast<int>(pairs->size()) < max_odds_ratio_pairs &&
                   attempts < 50 * max_odds_ratio_pairs) {
                ++attempts;
                int a = binary_items[rng.uniform_index(binary_items.size())];
                int b = binary_items[rng.uniform_index(binary_items.size())];
                if (a == b) continue;
                if (a > b) std::swap(a, b);
                bool dup = false;
                for (const auto& p : *pairs) {
                    if (p.j1 == a && p.j2 == b) { dup = true; break; }
                }
                if (dup) continue;
                Pair pr{a, b, {}};
                for (const auto& [person, obs_a] : by_person[a]) {
                    auto it = by_person[b].find(person);
                    if (it != by_person[b].end()) pr.obs.emplace_back(obs_a, it->second);
                }
                if (static_cast<int>(pr.obs.size()) >= 10) pairs->push_back(std::move(pr));
            }
        }
        if (!pairs->empty()) {
            stats.push_back([pairs](const std::vector<real>& values) {
                std::map<std::string, double> out;
                for (const auto& p : *pairs) {
                    double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
                    for (const auto& [oa, ob] : p.obs) {
                        const bool ya = values[oa] > real(0.5);
                        const bool yb = values[ob] > real(0.5);
                        if (ya && yb) ++n11;
                        else if (ya) ++n10;
                        else if (yb) ++n01;
                        else ++n00;
                    }
                    if (n11 > 0 && n10 > 0 && n01 > 0 && n00 > 0) {
                        out["odds_ratio[" + std::to_string(p.j1 + 1) + "," +
                            std::to_string(p.j2 + 1) + "]"] = (n11 * n00) / (n10 * n01);
                    }
                }
                return out;
            });
        }
    }

    return stats;
}

}  // namespace spice
