#pragma once

#include <vector>

#include "umc/importance.hpp"
#include "umc/trace.hpp"

namespace umc {

// Three-way split of the union of two task-specific top-p neuron sets.
struct OverlapReport {
    Component comp = Component::Understanding;
    int layer = 0;
    double p = 0.5;
    double frac_und_only = 0.0;
    double frac_gen_only = 0.0;
    double frac_shared = 0.0;
    int union_size = 0;
};

inline OverlapReport overlap(const ImportanceReport& report_und, const ImportanceReport& report_gen,
                             double p = 0.5) {
    if (p <= 0.0 || p >= 1.0) throw InputError("overlap threshold p must lie in (0,1)");
    if (report_und.comp != report_gen.comp || report_und.layer != report_gen.layer ||
        report_und.neuron_scores.size() != report_gen.neuron_scores.size())
        throw ContractError("overlap on reports with mismatched topology");
    const int dm = static_cast<int>(report_und.neuron_scores.size());
    const int k = static_cast<int>(p * dm);
    std::vector<char> in_und(static_cast<size_t>(dm), 0), in_gen(static_cast<size_t>(dm), 0);
    for (int i : top_k_indices(report_und.neuron_scores, k)) in_und[static_cast<size_t>(i)] = 1;
    for (int i : top_k_indices(report_gen.neuron_scores, k)) in_gen[static_cast<size_t>(i)] = 1;
    int only_u = 0, only_g = 0, both = 0;
    for (int i = 0; i < dm; ++i) {
        if (in_und[static_cast<size_t>(i)] && in_gen[static_cast<size_t>(i)]) ++both;
        else if (in_und[static_cast<size_t>(i)]) ++only_u;
        else if (in_gen[static_cast<size_t>(i)]) ++only_g;
    }
    OverlapReport rep;
    rep.comp = report_und.comp;
    rep.layer = report_und.layer;
    rep.p = p;
    rep.union_size = only_u + only_g + both;
    if (rep.union_size > 0) {
        rep.frac_und_only = static_cast<double>(only_u) / rep.union_size;
        rep.frac_gen_only = static_cast<double>(only_g) / rep.union_size;
        rep.frac_shared = static_cast<double>(both) / rep.union_size;
    }
    return rep;
}

// Per-layer activity split over all recorded (prompt, timestep) observations:
// always in the top-p set, never in it, or sample-dependent.
struct DynamicsReport {
    Component comp = Component::Understanding;
    int layer = 0;
    double frac_always_active = 0.0;
    double frac_inactive = 0.0;
    double frac_dependent = 0.0;
    long observations = 0;
};

inline std::vector<DynamicsReport> dynamics(const ActivationTrace& trace) {
    if (trace.dynamics.empty()) throw InputError("trace holds no dynamics observations");
    std::vector<DynamicsReport> out;
    for (const auto& [key, stat] : trace.dynamics) {
        if (stat.observations == 0) throw InputError("dynamics statistic with zero observations");
        DynamicsReport rep;
        rep.comp = static_cast<Component>(key.first);
        rep.layer = key.second;
        rep.observations = stat.observations;
        const int dm = static_cast<int>(stat.top_count.size());
        int always = 0, never = 0;
        for (long c : stat.top_count) {
            if (c == stat.observations) ++always;
            else if (c == 0) ++never;
        }
        rep.frac_always_active = static_cast<double>(always) / dm;
        rep.frac_inactive = static_cast<double>(never) / dm;
        rep.frac_dependent = 1.0 - rep.frac_always_active - rep.frac_inactive;
        out.push_back(rep);
    }
    return out;
}

}  // namespace umc
