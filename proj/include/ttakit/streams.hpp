// Deterministic synthetic data: a separable source distribution for
// supervised pretraining, three shift families (additive corruption with
// token dropout, orthogonal rotation of the embedding space, domain
// resampling with new class means), schedules over shift segments, and the
// dataset dump format. Generation is a pure function of (spec, seed, index),
// so segments can be produced in any order or in parallel.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ttakit/core.hpp"
#include "ttakit/model.hpp"
#include "ttakit/serialize.hpp"

namespace ttakit {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct SourceSpec {
    int d = 16;        // embedding dim
    int L = 16;        // context length
    int h_model = 32;  // hidden size of the model trained on this source
    Vector mu_bg;      // background token mean, dim d
    Vector mu_ans;     // answer token mean, dim d
    double sigma = 1.0;
    int span_min = 1;
    int span_max = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (d <= 0 || L <= 0 || h_model <= 0)
            throw std::invalid_argument("SourceSpec: dims must be positive");
        if (static_cast<int>(mu_bg.size()) != d || static_cast<int>(mu_ans.size()) != d)
            throw std::invalid_argument("SourceSpec: mean vectors must have dim d");
        if (sigma <= 0.0) throw std::invalid_argument("SourceSpec: sigma must be positive");
        if (span_min < 1 || span_max < span_min || span_max > L)
            throw std::invalid_argument("SourceSpec: bad span length bounds");
    }
};

enum class ShiftKind { corruption, rotation, domain };

inline const char* shift_kind_name(ShiftKind k) {
    switch (k) {
        case ShiftKind::corruption: return "corruption";
        case ShiftKind::rotation: return "rotation";
        case ShiftKind::domain: return "domain";
    }
    return "?";
}

// One shift family with its parameters. corruption: add N(0, eta^2 I) to
// every token, then zero each token with probability rho. rotation: tokens
// <- Q tokens for a fixed seeded orthogonal Q. domain: resample the instance
// from the source spec with replaced means / span law (gold regenerated).
struct ShiftSpec {
    ShiftKind kind = ShiftKind::corruption;
    // corruption
    double eta = 0.0;
    double rho = 0.0;
    // rotation
    std::uint64_t rot_seed = 0;
    // domain
    Vector mu_bg;
    Vector mu_ans;
    int span_min = 1;
    int span_max = 1;

    void validate(const SourceSpec& base) const {
        switch (kind) {
            case ShiftKind::corruption:
                if (eta < 0.0) throw std::invalid_argument("ShiftSpec: eta must be >= 0");
                if (rho < 0.0 || rho >= 1.0) throw std::invalid_argument("ShiftSpec: rho outside [0,1)");
                break;
            case ShiftKind::rotation:
                break;
            case ShiftKind::domain:
                if (static_cast<int>(mu_bg.size()) != base.d ||
                    static_cast<int>(mu_ans.size()) != base.d)
                    throw std::invalid_argument("ShiftSpec: domain means must have dim d");
                if (span_min < 1 || span_max < span_min || span_max > base.L)
                    throw std::invalid_argument("ShiftSpec: bad domain span bounds");
                break;
        }
    }
};

struct Segment {
    ShiftSpec shift;
    int steps = 1;
};

struct Schedule {
    std::vector<Segment> segments;

    void validate(const SourceSpec& base) const {
        if (segments.empty()) throw std::invalid_argument("Schedule: needs at least one segment");
        for (const Segment& s : segments) {
            if (s.steps < 1) throw std::invalid_argument("Schedule: each segment needs >= 1 step");
            s.shift.validate(base);
        }
    }

    int total_steps() const {
        int n = 0;
        for (const Segment& s : segments) n += s.steps;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

inline void append_spec_bytes(ByteWriter& w, const SourceSpec& s) {
    w.u32(static_cast<std::uint32_t>(s.d));
    w.u32(static_cast<std::uint32_t>(s.L));
    w.u32(static_cast<std::uint32_t>(s.h_model));
    for (double x : s.mu_bg) w.f64(x);
    for (double x : s.mu_ans) w.f64(x);
    w.f64(s.sigma);
    w.u32(static_cast<std::uint32_t>(s.span_min));
    w.u32(static_cast<std::uint32_t>(s.span_max));
    w.u64(s.seed);
}

inline void append_shift_bytes(ByteWriter& w, const ShiftSpec& s) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.f64(s.eta);
    w.f64(s.rho);
    w.u64(s.rot_seed);
    w.u32(static_cast<std::uint32_t>(s.mu_bg.size()));
    for (double x : s.mu_bg) w.f64(x);
    for (double x : s.mu_ans) w.f64(x);
    w.u32(static_cast<std::uint32_t>(s.span_min));
    w.u32(static_cast<std::uint32_t>(s.span_max));
}

inline std::uint64_t hash_spec(const SourceSpec& s) {
    ByteWriter w;
    append_spec_bytes(w, s);
    return fnv1a(w.bytes());
}

inline std::uint64_t hash_shift(const SourceSpec& base, const ShiftSpec& s) {
    ByteWriter w;
    append_spec_bytes(w, base);
    append_shift_bytes(w, s);
    return fnv1a(w.bytes());
}

inline std::uint64_t hash_schedule(const SourceSpec& base, const Schedule& sched) {
    ByteWriter w;
    append_spec_bytes(w, base);
    for (const Segment& seg : sched.segments) {
        append_shift_bytes(w, seg.shift);
        w.u32(static_cast<std::uint32_t>(seg.steps));
    }
    return fnv1a(w.bytes());
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Draw one instance: gold span chosen uniformly under the span-length law,
// background tokens ~ N(mu_bg, sigma^2 I), span tokens ~ N(mu_ans, sigma^2 I).
inline Instance gen_instance(const SourceSpec& spec, Rng& rng) {
    const int len = spec.span_min + rng.next_int(spec.span_max - spec.span_min + 1);
    const int start = rng.next_int(spec.L - len + 1);
    const Span gold{start, start + len - 1};
    Matrix tokens(spec.L, spec.d);
    for (int i = 0; i < spec.L; ++i) {
        const bool in_span = i >= gold.start && i <= gold.end;
        const Vector& mu = in_span ? spec.mu_ans : spec.mu_bg;
        double* row = tokens.row(i);
        for (int k = 0; k < spec.d; ++k) row[k] = mu[static_cast<size_t>(k)] + spec.sigma * rng.next_normal();
    }
    return Instance{std::move(tokens), gold};
}

inline std::vector<Instance> gen_source(const SourceSpec& spec, int n) {
    spec.validate();
    std::vector<Instance> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
        out.push_back(gen_instance(spec, rng));
    }
    return out;
}

// Random orthogonal matrix: Gaussian draw followed by modified Gram-Schmidt
// with one re-orthogonalization pass.
inline Matrix make_orthogonal(int d, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x726f74ULL));
    Matrix q(d, d);
    for (double& x : q.data) x = rng.next_normal();
    // columns of q orthonormalized in place
    for (int pass = 0; pass < 2; ++pass) {
        for (int c = 0; c < d; ++c) {
            for (int prev = 0; prev < c; ++prev) {
                double dot = 0.0;
                for (int r = 0; r < d; ++r) dot += q.at(r, c) * q.at(r, prev);
                for (int r = 0; r < d; ++r) q.at(r, c) -= dot * q.at(r, prev);
            }
            double norm = 0.0;
            for (int r = 0; r < d; ++r) norm += q.at(r, c) * q.at(r, c);
            norm = std::sqrt(norm);
            if (norm < 1e-12) throw std::runtime_error("make_orthogonal: degenerate column");
            for (int r = 0; r < d; ++r) q.at(r, c) /= norm;
        }
    }
    return q;
}

// Apply a shift to one instance. The base spec supplies dimensions and, for
// domain shifts, the fields the shift does not override. Gold spans are
// preserved under corruption and rotation and regenerated under domain.
inline Instance apply_shift(const Instance& inst, const ShiftSpec& shift,
                            const SourceSpec& base, Rng& rng) {
    switch (shift.kind) {
        case ShiftKind::corruption: {
            Instance out = inst;
            if (shift.eta > 0.0) {
                for (double& x : out.tokens.data) x += shift.eta * rng.next_normal();
            }
            if (shift.rho > 0.0) {
                for (int i = 0; i < out.tokens.rows; ++i) {
                    if (rng.next_double() < shift.rho) {
                        double* row = out.tokens.row(i);
                        for (int k = 0; k < out.tokens.cols; ++k) row[k] = 0.0;
                    }
                }
            }
            return out;
        }
        case ShiftKind::rotation: {
            if (inst.tokens.cols != base.d)
                throw std::invalid_argument("apply_shift: token dim mismatch");
            const Matrix q = make_orthogonal(base.d, shift.rot_seed);
            Instance out = inst;
            for (int i = 0; i < inst.tokens.rows; ++i) {
                const double* x = inst.tokens.row(i);
                double* y = out.tokens.row(i);
                for (int r = 0; r < base.d; ++r) {
                    double acc = 0.0;
                    for (int c = 0; c < base.d; ++c) acc += q.at(r, c) * x[c];
                    y[r] = acc;
                }
            }
            return out;
        }
        case ShiftKind::domain: {
            SourceSpec altered = base;
            altered.mu_bg = shift.mu_bg;
            altered.mu_ans = shift.mu_ans;
            altered.span_min = shift.span_min;
            altered.span_max = shift.span_max;
            altered.validate();
            return gen_instance(altered, rng);
        }
    }
    throw std::logic_error("apply_shift: unknown kind");
}

// ---------------------------------------------------------------------------
// Stream batches
// ---------------------------------------------------------------------------

// What the adaptation engine is allowed to see: token matrices only.
struct InputBatch {
    int step = 0;     // 1-based global step index
    int segment = 0;  // index into the schedule
    std::vector<Matrix> tokens;
};

// Full batch, gold spans included; consumed by metrics and training only.
struct StreamBatch {
    int step = 0;
    int segment = 0;
    std::vector<Instance> instances;

    InputBatch strip() const {
        InputBatch in{step, segment, {}};
        in.tokens.reserve(instances.size());
        for (const Instance& inst : instances) in.tokens.push_back(inst.tokens);
        return in;
    }
};

// Yields batches segment by segment; deterministic in (spec, schedule,
// batch_size, seed). Each emitted instance is derived from its own counter
// seed, so two streams with the same seed are bitwise identical.
class StreamGenerator {
public:
    StreamGenerator(SourceSpec spec, Schedule schedule, int batch_size, std::uint64_t seed)
        : spec_(std::move(spec)), schedule_(std::move(schedule)), batch_size_(batch_size),
          seed_(seed) {
        spec_.validate();
        schedule_.validate(spec_);
        if (batch_size_ < 1) throw std::invalid_argument("StreamGenerator: batch_size must be >= 1");
    }

    std::optional<StreamBatch> next() {
        if (segment_ >= static_cast<int>(schedule_.segments.size())) return std::nullopt;
        const Segment& seg = schedule_.segments[static_cast<size_t>(segment_)];
        StreamBatch batch;
        batch.step = ++step_;
        batch.segment = segment_;
        batch.instances.reserve(static_cast<size_t>(batch_size_));
        for (int b = 0; b < batch_size_; ++b) {
            const std::uint64_t idx = counter_++;
            Rng gen_rng(mix_seed(mix_seed(seed_, 0x67656eULL), idx));
            Rng shift_rng(mix_seed(mix_seed(seed_, 0x736866ULL), idx));
            const Instance clean = gen_instance(spec_, gen_rng);
            batch.instances.push_back(apply_shift(clean, seg.shift, spec_, shift_rng));
        }
        if (++step_in_segment_ >= seg.steps) {
            segment_ += 1;
            step_in_segment_ = 0;
        }
        return batch;
    }

    int total_steps() const { return schedule_.total_steps(); }

private:
    SourceSpec spec_;
    Schedule schedule_;
    int batch_size_;
    std::uint64_t seed_;
    int segment_ = 0;
    int step_in_segment_ = 0;
    int step_ = 0;
    std::uint64_t counter_ = 0;
};

// Materialize the whole stream (toy scale keeps this cheap).
inline std::vector<StreamBatch> materialize_stream(const SourceSpec& spec, const Schedule& sched,
                                                   int batch_size, std::uint64_t seed) {
    StreamGenerator gen(spec, sched, batch_size, seed);
    std::vector<StreamBatch> out;
    while (auto b = gen.next()) out.push_back(std::move(*b));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset dump format
// ---------------------------------------------------------------------------
// magic "TTDS", version byte, u32 d, u32 L, u64 n, u64 seed, u64 spec hash,
// then per instance L*d little-endian doubles and u32 start, u32 end.

constexpr std::uint32_t kDatasetMagic = 0x53445454;  // "TTDS" little-endian
constexpr std::uint8_t kDatasetVersion = 1;

struct Dataset {
    int d = 0;
    int L = 0;
    std::uint64_t seed = 0;
    std::uint64_t spec_hash = 0;
    std::vector<Instance> instances;
};

inline void save_dataset(const std::string& path, const Dataset& ds) {
    ByteWriter w;
    w.u32(kDatasetMagic);
    w.u8(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.d));
    w.u32(static_cast<std::uint32_t>(ds.L));
    w.u64(static_cast<std::uint64_t>(ds.instances.size()));
    w.u64(ds.seed);
    w.u64(ds.spec_hash);
    for (const Instance& inst : ds.instances) {
        if (inst.tokens.rows != ds.L || inst.tokens.cols != ds.d)
            throw std::invalid_argument("save_dataset: instance shape mismatch");
        if (!inst.gold) throw std::invalid_argument("save_dataset: instance has no gold span");
        for (double x : inst.tokens.data) w.f64(x);
        w.u32(static_cast<std::uint32_t>(inst.gold->start));
        w.u32(static_cast<std::uint32_t>(inst.gold->end));
    }
    w.to_file(path);
}

inline Dataset load_dataset(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    if (r.u32() != kDatasetMagic) throw std::runtime_error("not a dataset file: " + path);
    if (r.u8() != kDatasetVersion) throw std::runtime_error("unsupported dataset version: " + path);
    Dataset ds;
    ds.d = static_cast<int>(r.u32());
    ds.L = static_cast<int>(r.u32());
    const std::uint64_t n = r.u64();
    ds.seed = r.u64();
    ds.spec_hash = r.u64();
    ds.instances.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Matrix tokens(ds.L, ds.d);
        for (double& x : tokens.data) x = r.f64();
        Span gold;
        gold.start = static_cast<int>(r.u32());
        gold.end = static_cast<int>(r.u32());
        ds.instances.push_back(Instance{std::move(tokens), gold});
    }
    if (!r.exhausted()) throw std::runtime_error("trailing bytes in dataset " + path);
    return ds;
}

}  // namespace ttakit
