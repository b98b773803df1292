// Online evaluation: exact match and token-overlap F1 over position index
// sets, per-segment aggregation, and baseline-relative gains.
#pragma once

#include <optional>
#include <vector>

#include "ttakit/core.hpp"
#include "ttakit/model.hpp"
#include "ttakit/streams.hpp"
#include "ttakit/tta.hpp"

namespace ttakit {

inline int em(const Span& pred, const Span& gold) {
    return (pred.start == gold.start && pred.end == gold.end) ? 1 : 0;
}

// Token-index overlap F1. A prediction with start > end denotes the empty
// span and scores 0 against any (nonempty) gold span.
inline double span_f1(const Span& pred, const Span& gold) {
    if (pred.start > pred.end) return 0.0;
    const int lo = std::max(pred.start, gold.start);
    const int hi = std::min(pred.end, gold.end);
    const int overlap = std::max(0, hi - lo + 1);
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / (pred.end - pred.start + 1);
    const double recall = static_cast<double>(overlap) / (gold.end - gold.start + 1);
    return 2.0 * precision * recall / (precision + recall);
}

// Absolute-points gain. Callers are responsible for having measured the
// baseline on the identical stream; gain_report below enforces it via the
// stream fingerprint.
inline double relative_gain(double adapted, double baseline) { return adapted - baseline; }

// ---------------------------------------------------------------------------
// Run summaries
// ---------------------------------------------------------------------------

struct SegmentSummary {
    int segment = 0;
    std::string shift_kind;
    int steps = 0;
    int instances = 0;
    double em = 0.0;
    double f1 = 0.0;
    double em_gain = 0.0;  // vs baseline, when present
    double f1_gain = 0.0;
};

struct RunSummary {
    std::uint64_t seed = 0;
    std::uint64_t stream_fingerprint = 0;
    int steps = 0;
    int instances = 0;
    double em = 0.0;
    double f1 = 0.0;
    double cumulative_loss = 0.0;
    double mean_pass_rate = 1.0;
    int aborted_steps = 0;
    bool has_baseline = false;
    double em_gain = 0.0;
    double f1_gain = 0.0;
    double baseline_em = 0.0;
    double baseline_f1 = 0.0;
    std::vector<SegmentSummary> segments;
    std::vector<double> step_em;  // per-step means, for plot-ready CSVs
    std::vector<double> step_f1;
};

// Identity of a stream: generative spec, schedule, batch size, and seed.
inline std::uint64_t stream_fingerprint(const SourceSpec& spec, const Schedule& sched,
                                        int batch_size, std::uint64_t seed) {
    ByteWriter w;
    w.u64(hash_schedule(spec, sched));
    w.u32(static_cast<std::uint32_t>(batch_size));
    w.u64(seed);
    return fnv1a(w.bytes());
}

// Aggregate step records against the gold-bearing batches they were made on.
// Records and batches must be aligned one to one by step index.
inline RunSummary summarize(const std::vector<StepRecord>& records,
                            const std::vector<StreamBatch>& batches,
                            const Schedule& schedule,
                            const std::vector<StepRecord>* baseline = nullptr) {
    if (records.size() != batches.size())
        throw std::invalid_argument("summarize: records and batches misaligned");
    if (baseline != nullptr && baseline->size() != records.size())
        throw std::invalid_argument("summarize: baseline records misaligned");

    RunSummary s;
    s.steps = static_cast<int>(records.size());
    const int n_segments = static_cast<int>(schedule.segments.size());
    s.segments.resize(static_cast<size_t>(n_segments));
    for (int g = 0; g < n_segments; ++g) {
        s.segments[static_cast<size_t>(g)].segment = g;
        s.segments[static_cast<size_t>(g)].shift_kind =
            shift_kind_name(schedule.segments[static_cast<size_t>(g)].shift.kind);
    }
    std::vector<double> seg_base_em(static_cast<size_t>(n_segments), 0.0);
    std::vector<double> seg_base_f1(static_cast<size_t>(n_segments), 0.0);
    double base_em_sum = 0.0, base_f1_sum = 0.0;

    auto batch_metrics = [](const std::vector<Span>& preds, const StreamBatch& batch,
                            double& em_sum, double& f1_sum) {
        if (preds.size() != batch.instances.size())
            throw std::invalid_argument("summarize: prediction count mismatch");
        for (size_t i = 0; i < preds.size(); ++i) {
            const Instance& inst = batch.instances[i];
            if (!inst.gold) throw std::invalid_argument("summarize: instance has no gold span");
            em_sum += em(preds[i], *inst.gold);
            f1_sum += span_f1(preds[i], *inst.gold);
        }
    };

    double pass_sum = 0.0;
    for (size_t t = 0; t < records.size(); ++t) {
        const StepRecord& rec = records[t];
        const StreamBatch& batch = batches[t];
        if (rec.t != batch.step) throw std::invalid_argument("summarize: step index mismatch");
        if (batch.segment < 0 || batch.segment >= n_segments)
            throw std::invalid_argument("summarize: segment tag out of range");
        SegmentSummary& seg = s.segments[static_cast<size_t>(batch.segment)];

        double em_sum = 0.0, f1_sum = 0.0;
        batch_metrics(rec.predictions, batch, em_sum, f1_sum);
        const int n = static_cast<int>(batch.instances.size());
        s.step_em.push_back(em_sum / n);
        s.step_f1.push_back(f1_sum / n);
        seg.steps += 1;
        seg.instances += n;
        seg.em += em_sum;
        seg.f1 += f1_sum;
        s.instances += n;
        s.em += em_sum;
        s.f1 += f1_sum;
        s.cumulative_loss += rec.loss;
        pass_sum += rec.pass_rate;
        s.aborted_steps += rec.aborted ? 1 : 0;

        if (baseline != nullptr) {
            const StepRecord& base = (*baseline)[t];
            if (base.t != batch.step) throw std::invalid_argument("summarize: baseline step mismatch");
            double bem = 0.0, bf1 = 0.0;
            batch_metrics(base.predictions, batch, bem, bf1);
            seg_base_em[static_cast<size_t>(batch.segment)] += bem;
            seg_base_f1[static_cast<size_t>(batch.segment)] += bf1;
            base_em_sum += bem;
            base_f1_sum += bf1;
        }
    }

    for (SegmentSummary& seg : s.segments) {
        if (seg.instances > 0) {
            seg.em /= seg.instances;
            seg.f1 /= seg.instances;
        }
    }
    if (s.instances > 0) {
        s.em /= s.instances;
        s.f1 /= s.instances;
    }
    s.mean_pass_rate = s.steps > 0 ? pass_sum / s.steps : 1.0;

    if (baseline != nullptr) {
        s.has_baseline = true;
        s.baseline_em = s.instances > 0 ? base_em_sum / s.instances : 0.0;
        s.baseline_f1 = s.instances > 0 ? base_f1_sum / s.instances : 0.0;
        s.em_gain = relative_gain(s.em, s.baseline_em);
        s.f1_gain = relative_gain(s.f1, s.baseline_f1);
        for (int g = 0; g < n_segments; ++g) {
            SegmentSummary& seg = s.segments[static_cast<size_t>(g)];
            if (seg.instances > 0) {
                seg.em_gain = relative_gain(seg.em, seg_base_em[static_cast<size_t>(g)] / seg.instances);
                seg.f1_gain = relative_gain(seg.f1, seg_base_f1[static_cast<size_t>(g)] / seg.instances);
            }
        }
    }
    return s;
}

}  // namespace ttakit
