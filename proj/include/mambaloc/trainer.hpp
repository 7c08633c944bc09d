#pragma once

#include <array>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mambaloc/checkpoint.hpp"
#include "mambaloc/config.hpp"
#include "mambaloc/evaluation.hpp"
#include "mambaloc/losses.hpp"
#include "mambaloc/model.hpp"
#include "mambaloc/scenegen.hpp"

namespace mambaloc {

inline std::vector<double> descriptor_values(const Tensor<float>& desc) {
    std::vector<double> out(desc.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(desc.data()[i]);
    return out;
}

inline EmbeddingIndex build_index(const CoarseModel<float>& model,
                                  const std::vector<Submap>& submaps) {
    if (submaps.empty()) throw ValueError("build_index: no submaps");
    Tensor<float> probe = model.cloud.encode(submaps.front());
    EmbeddingIndex index(probe.numel());
    index.add(submaps.front().cell_id, submaps.front().center_xy, descriptor_values(probe));
    for (std::size_t i = 1; i < submaps.size(); ++i) {
        index.add(submaps[i].cell_id, submaps[i].center_xy,
                  descriptor_values(model.cloud.encode(submaps[i])));
    }
    return index;
}

/// In-batch contrastive negatives must come from distinct cells, so
/// batches are assembled greedily from a shuffled query order, never
/// placing two queries of the same cell together. A trailing remainder
/// that cannot fill a full batch is dropped for the epoch.
inline std::vector<std::vector<std::size_t>> make_contrastive_batches(
    const std::vector<const TextQuery*>& queries, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> remaining(queries.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
    rng.shuffle(remaining);

    std::vector<std::vector<std::size_t>> batches;
    while (remaining.size() >= batch_size) {
        std::vector<std::size_t> batch;
        std::set<std::uint64_t> used_cells;
        std::vector<std::size_t> rest;
        for (std::size_t idx : remaining) {
            if (batch.size() < batch_size &&
                used_cells.insert(queries[idx]->cell_id).second) {
                batch.push_back(idx);
            } else {
                rest.push_back(idx);
            }
        }
        if (batch.size() < batch_size) break;
        batches.push_back(std::move(batch));
        remaining = std::move(rest);
    }
    return batches;
}

inline void check_batch_cells_distinct(const std::vector<const TextQuery*>& batch) {
    std::set<std::uint64_t> cells;
    for (const TextQuery* q : batch) {
        if (!cells.insert(q->cell_id).second) {
            throw ValueError("batch construction: duplicate cell " +
                             std::to_string(q->cell_id) + " in contrastive batch");
        }
    }
}

/// Training-time perturbations for the coarse stage, all drawn from the
/// checkpointed training generator. Exact cell signatures change every
/// presentation, which pushes the encoders toward attribute-level
/// features instead of per-cell memorization. Validation and evaluation
/// always see unperturbed inputs.
struct CoarseAugment {
    double hint_drop = 0.0;       // probability of dropping each hint (>= 1 kept)
    double instance_drop = 0.0;   // probability of dropping each instance (>= 1 kept)
    double centroid_jitter = 0.0; // meters, uniform per axis
    double color_jitter = 0.0;    // rgb units, uniform per channel

    std::vector<std::string> hints(const TextQuery& q, Rng& rng) const {
        std::vector<std::string> kept;
        for (const auto& h : q.hints) {
            if (rng.uniform() >= hint_drop) kept.push_back(h);
        }
        if (kept.empty() && !q.hints.empty()) {
            kept.push_back(q.hints[rng.below(q.hints.size())]);
        }
        return kept;
    }

    Submap submap(const Submap& s, Rng& rng) const {
        Submap out;
        out.cell_id = s.cell_id;
        out.center_xy = s.center_xy;
        for (const auto& inst : s.instances) {
            if (rng.uniform() < instance_drop) continue;
            ObjectInstance copy = inst;
            if (centroid_jitter > 0.0) {
                // Shift the whole instance; points stay centroid-relative.
                const double dx = rng.uniform(-centroid_jitter, centroid_jitter);
                const double dy = rng.uniform(-centroid_jitter, centroid_jitter);
                copy.centroid[0] += dx;
                copy.centroid[1] += dy;
                for (auto& p : copy.points) {
                    p[0] += dx;
                    p[1] += dy;
                }
            }
            if (color_jitter > 0.0) {
                for (auto& c : copy.color_rgb) {
                    c += rng.uniform(-color_jitter, color_jitter);
                }
            }
            out.instances.push_back(std::move(copy));
        }
        if (out.instances.empty()) {
            out.instances.push_back(s.instances[rng.below(s.instances.size())]);
        }
        return out;
    }
};

inline std::string format_line(const char* fmt, ...) {
    char buf[256];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return std::string(buf);
}

struct TrainResult {
    double final_loss = 0.0;
    double final_metric = 0.0; // recall@1 for coarse, val error (m) for fine
    std::uint32_t epochs_run = 0;
};

namespace detail {

inline void log_config(std::ostream& log, const RunConfig& cfg) {
    std::istringstream lines(cfg.resolved_text());
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty()) log << "config " << line << '\n';
    }
    log << "config_digest=" << cfg.digest() << '\n';
}

inline std::vector<const TextQuery*> split_queries(const World& world,
                                                   const std::string& split) {
    std::vector<const TextQuery*> out;
    for (const auto& q : world.queries) {
        if (q.split == split) out.push_back(&q);
    }
    return out;
}

inline std::map<std::uint64_t, const Submap*> submap_lookup(const World& world) {
    std::map<std::uint64_t, const Submap*> out;
    for (const auto& s : world.submaps) out[s.cell_id] = &s;
    return out;
}

inline const Submap& submap_of(const std::map<std::uint64_t, const Submap*>& lookup,
                               std::uint64_t cell_id) {
    auto it = lookup.find(cell_id);
    if (it == lookup.end()) {
        throw ValueError("query references unknown cell " + std::to_string(cell_id));
    }
    return *it->second;
}

inline double coarse_recall1(const CoarseModel<float>& model, const EmbeddingIndex& index,
                             const std::vector<const TextQuery*>& queries) {
    if (queries.empty()) return 0.0;
    std::size_t hits = 0;
    for (const TextQuery* q : queries) {
        const auto result = top_k(index, descriptor_values(model.text.encode(*q)), 1);
        if (result.ranked.front().cell_id == q->cell_id) ++hits;
    }
    return double(hits) / double(queries.size());
}

} // namespace detail

/// Contrastive training of the two coarse encoders. Writes a checkpoint
/// after every epoch to `out_path`; `resume` continues a previous run
/// bit-exactly (parameters, optimizer moments, generator state, epoch).
inline TrainResult train_coarse(const Dataset& ds, RunConfig cfg, const std::string& out_path,
                                std::ostream& log) {
    cfg.set("stage", "coarse");
    cfg.set("data_digest", ds.digest);
    const std::string config_text = cfg.resolved_text();
    detail::log_config(log, cfg);

    const std::uint64_t seed = cfg.uint("seed");
    const std::size_t batch_size = cfg.uint("batch_size");
    const std::uint32_t epochs = static_cast<std::uint32_t>(cfg.uint("epochs"));
    const std::uint32_t stop_after = static_cast<std::uint32_t>(cfg.uint("stop_after_epoch"));
    const float lr = static_cast<float>(cfg.num("lr"));
    const float tau = static_cast<float>(cfg.num("temperature"));
    const double grad_clip = cfg.num("grad_clip");
    const ContrastiveMode mode = contrastive_mode_from_string(cfg.str("contrastive"));
    if (batch_size < 2) throw ConfigError("contrastive stage needs batch_size >= 2");
    CoarseAugment augment;
    augment.hint_drop = cfg.num("aug_hint_drop");
    augment.instance_drop = cfg.num("aug_instance_drop");
    augment.centroid_jitter = cfg.num("aug_centroid_jitter");
    augment.color_jitter = cfg.num("aug_color_jitter");

    CoarseModel<float> model(ModelConfig::from_run_config(cfg), seed);
    Adam<float> adam;
    Rng train_rng = Rng::derive(seed, 0x7241);
    std::uint32_t start_epoch = 0;

    const std::string resume = cfg.str("resume");
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        if (ck.config_text != config_text) {
            throw DependencyError("resume checkpoint was trained with a different config");
        }
        restore_params(ck, model.params);
        restore_optimizer(ck, model.params, adam);
        train_rng.set_state(ck.rng_state);
        start_epoch = ck.epoch;
    }

    const auto train_queries = detail::split_queries(ds.world, "train");
    const auto val_queries = detail::split_queries(ds.world, "val");
    const auto lookup = detail::submap_lookup(ds.world);
    {
        std::set<std::uint64_t> cells;
        for (const TextQuery* q : train_queries) cells.insert(q->cell_id);
        if (cells.size() < batch_size) {
            throw ValueError("batch construction: need >= " + std::to_string(batch_size) +
                             " distinct training cells, have " + std::to_string(cells.size()));
        }
    }

    TrainResult result;
    for (std::uint32_t epoch = start_epoch; epoch < epochs; ++epoch) {
        const auto batches = make_contrastive_batches(train_queries, batch_size, train_rng);
        double epoch_loss = 0.0;
        for (const auto& batch : batches) {
            std::vector<const TextQuery*> members;
            members.reserve(batch.size());
            for (std::size_t idx : batch) members.push_back(train_queries[idx]);
            check_batch_cells_distinct(members);

            TapeScope<float> scope;
            std::vector<Tensor<float>> text_rows, cloud_rows;
            text_rows.reserve(members.size());
            cloud_rows.reserve(members.size());
            for (const TextQuery* q : members) {
                text_rows.push_back(model.text.encode(augment.hints(*q, train_rng)));
                cloud_rows.push_back(model.cloud.encode(
                    augment.submap(detail::submap_of(lookup, q->cell_id), train_rng)));
            }
            Tensor<float> loss = contrastive_loss(concat_rows(cloud_rows),
                                                  concat_rows(text_rows), tau, mode);
            model.params.zero_grad_all();
            scope.tape().backward(loss);
            clip_global_norm(model.params, grad_clip);
            adam.step(model.params, lr);
            epoch_loss += double(loss.item());
        }
        epoch_loss /= batches.empty() ? 1.0 : double(batches.size());

        const EmbeddingIndex index = build_index(model, ds.world.submaps);
        const double recall1 = detail::coarse_recall1(model, index, val_queries);
        log << format_line("epoch=%u loss=%.4f recall1=%.4f", epoch + 1, epoch_loss, recall1)
            << std::endl;

        result.final_loss = epoch_loss;
        result.final_metric = recall1;
        result.epochs_run = epoch + 1;
        save_checkpoint(make_checkpoint(config_text, model.params, adam, train_rng, epoch + 1),
                        out_path);
        if (stop_after > 0 && epoch + 1 >= stop_after) break;
    }
    return result;
}

/// Frozen-encoder token caches for the fine stage.
struct FineCache {
    std::map<std::uint64_t, Tensor<float>> text_tokens;  // by query id
    std::map<std::uint64_t, Tensor<float>> cloud_tokens; // by cell id
};

inline FineCache build_fine_cache(const CoarseModel<float>& coarse, const World& world,
                                  const std::vector<const TextQuery*>& queries) {
    FineCache cache;
    auto lookup = detail::submap_lookup(world);
    for (const TextQuery* q : queries) {
        cache.text_tokens.emplace(q->query_id, coarse.text.encode_tokens(q->hints));
        if (cache.cloud_tokens.find(q->cell_id) == cache.cloud_tokens.end()) {
            cache.cloud_tokens.emplace(
                q->cell_id, coarse.cloud.encode_tokens(detail::submap_of(lookup, q->cell_id)));
        }
    }
    return cache;
}

/// Offset regression training against ground-truth cells, with the
/// coarse encoders frozen (their outputs are cached up front).
inline TrainResult train_fine(const Dataset& ds, RunConfig cfg,
                              const std::string& coarse_ckpt_path,
                              const std::string& out_path, std::ostream& log) {
    cfg.set("stage", "fine");
    cfg.set("data_digest", ds.digest);

    Checkpoint coarse_ck = load_checkpoint(coarse_ckpt_path);
    const RunConfig coarse_cfg = RunConfig::from_text(coarse_ck.config_text);
    if (coarse_cfg.str("data_digest") != ds.digest) {
        throw DependencyError("coarse checkpoint was trained on a different dataset");
    }
    CoarseModel<float> coarse(ModelConfig::from_run_config(coarse_cfg),
                              coarse_cfg.uint("seed"));
    restore_params(coarse_ck, coarse.params);

    const std::string config_text = cfg.resolved_text();
    detail::log_config(log, cfg);

    const std::uint64_t seed = cfg.uint("seed");
    const std::size_t batch_size = cfg.uint("batch_size");
    const std::uint32_t epochs = static_cast<std::uint32_t>(cfg.uint("epochs"));
    const std::uint32_t stop_after = static_cast<std::uint32_t>(cfg.uint("stop_after_epoch"));
    const float lr = static_cast<float>(cfg.num("lr"));
    const double grad_clip = cfg.num("grad_clip");
    const bool squared = [&] {
        const std::string v = cfg.str("fine_loss");
        if (v == "norm") return false;
        if (v == "squared") return true;
        throw ConfigError("fine_loss must be 'norm' or 'squared'");
    }();

    const auto train_queries = detail::split_queries(ds.world, "train");
    const auto val_queries = detail::split_queries(ds.world, "val");
    if (train_queries.empty()) throw ValueError("fine stage: no training queries");
    auto all_queries = train_queries;
    all_queries.insert(all_queries.end(), val_queries.begin(), val_queries.end());
    const FineCache cache = build_fine_cache(coarse, ds.world, all_queries);
    const auto lookup = detail::submap_lookup(ds.world);

    FineModel<float> model(ModelConfig::from_run_config(cfg), seed);
    Adam<float> adam;
    Rng train_rng = Rng::derive(seed, 0xF7A1);
    std::uint32_t start_epoch = 0;

    const std::string resume = cfg.str("resume");
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        if (ck.config_text != config_text) {
            throw DependencyError("resume checkpoint was trained with a different config");
        }
        restore_params(ck, model.params);
        restore_optimizer(ck, model.params, adam);
        train_rng.set_state(ck.rng_state);
        start_epoch = ck.epoch;
    }

    auto local_target = [&](const TextQuery& q) {
        const Submap& cell = detail::submap_of(lookup, q.cell_id);
        return Tensor<float>({1, 2},
                             {static_cast<float>(q.target_xy[0] - cell.center_xy[0]),
                              static_cast<float>(q.target_xy[1] - cell.center_xy[1])});
    };

    auto val_error = [&] {
        if (val_queries.empty()) return 0.0;
        double total = 0.0;
        for (const TextQuery* q : val_queries) {
            FineInput<float> in{cache.text_tokens.at(q->query_id),
                                cache.cloud_tokens.at(q->cell_id)};
            const OffsetPrediction pred = model.localizer.predict(in);
            const Tensor<float> gt = local_target(*q);
            total += std::hypot(pred.x - double(gt.data()[0]), pred.y - double(gt.data()[1]));
        }
        return total / double(val_queries.size());
    };

    TrainResult result;
    for (std::uint32_t epoch = start_epoch; epoch < epochs; ++epoch) {
        std::vector<std::size_t> order(train_queries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        train_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            TapeScope<float> scope;
            std::vector<Tensor<float>> preds, gts;
            for (std::size_t i = start; i < end; ++i) {
                const TextQuery& q = *train_queries[order[i]];
                FineInput<float> in{cache.text_tokens.at(q.query_id),
                                    cache.cloud_tokens.at(q.cell_id)};
                preds.push_back(model.localizer.forward(in));
                gts.push_back(local_target(q));
            }
            Tensor<float> loss = fine_loss_batch(preds, gts, squared);
            model.params.zero_grad_all();
            scope.tape().backward(loss);
            clip_global_norm(model.params, grad_clip);
            adam.step(model.params, lr);
            epoch_loss += double(loss.item());
            ++n_batches;
        }
        epoch_loss /= n_batches == 0 ? 1.0 : double(n_batches);

        const double verr = val_error();
        log << format_line("epoch=%u loss=%.4f val_err=%.4f", epoch + 1, epoch_loss, verr)
            << std::endl;

        result.final_loss = epoch_loss;
        result.final_metric = verr;
        result.epochs_run = epoch + 1;
        save_checkpoint(make_checkpoint(config_text, model.params, adam, train_rng, epoch + 1),
                        out_path);
        if (stop_after > 0 && epoch + 1 >= stop_after) break;
    }
    return result;
}

/// Full retrieval + localization evaluation of one split. With no fine
/// checkpoint, predictions fall back to the retrieved cell centers.
inline EvalReport evaluate(const Dataset& ds, const std::string& coarse_ckpt_path,
                           const std::string& fine_ckpt_path, const std::string& split) {
    Checkpoint coarse_ck = load_checkpoint(coarse_ckpt_path);
    const RunConfig coarse_cfg = RunConfig::from_text(coarse_ck.config_text);
    if (coarse_cfg.str("data_digest") != ds.digest) {
        throw DependencyError("provenance: coarse checkpoint dataset digest " +
                              coarse_cfg.str("data_digest") + " != dataset " + ds.digest);
    }
    CoarseModel<float> coarse(ModelConfig::from_run_config(coarse_cfg),
                              coarse_cfg.uint("seed"));
    restore_params(coarse_ck, coarse.params);

    std::unique_ptr<FineModel<float>> fine;
    if (!fine_ckpt_path.empty()) {
        Checkpoint fine_ck = load_checkpoint(fine_ckpt_path);
        const RunConfig fine_cfg = RunConfig::from_text(fine_ck.config_text);
        if (fine_cfg.str("data_digest") != ds.digest) {
            throw DependencyError("provenance: fine checkpoint dataset digest " +
                                  fine_cfg.str("data_digest") + " != dataset " + ds.digest);
        }
        fine = std::make_unique<FineModel<float>>(ModelConfig::from_run_config(fine_cfg),
                                                  fine_cfg.uint("seed"));
        restore_params(fine_ck, fine->params);
    }

    const auto queries = detail::split_queries(ds.world, split);
    if (queries.empty()) throw ValueError("no queries in split '" + split + "'");
    const auto lookup = detail::submap_lookup(ds.world);
    const EmbeddingIndex index = build_index(coarse, ds.world.submaps);

    const std::size_t max_k = EvalReport::loc_ks().back();
    std::map<std::uint64_t, Tensor<float>> cloud_cache;
    std::vector<std::vector<std::uint64_t>> rankings;
    std::vector<std::vector<std::array<double, 2>>> predictions;
    std::vector<std::array<double, 2>> top1;
    std::vector<std::uint64_t> gt_cells;
    std::vector<std::array<double, 2>> gt_xy;

    for (const TextQuery* q : queries) {
        const TopKResult ranked = top_k(index, descriptor_values(coarse.text.encode(*q)),
                                        max_k);
        Tensor<float> text_tokens;
        if (fine) text_tokens = coarse.text.encode_tokens(q->hints);

        std::vector<std::uint64_t> cells;
        std::vector<std::array<double, 2>> preds;
        for (const RankedCell& rc : ranked.ranked) {
            cells.push_back(rc.cell_id);
            std::array<double, 2> pred = rc.center;
            if (fine) {
                auto it = cloud_cache.find(rc.cell_id);
                if (it == cloud_cache.end()) {
                    it = cloud_cache
                             .emplace(rc.cell_id, coarse.cloud.encode_tokens(
                                                      detail::submap_of(lookup, rc.cell_id)))
                             .first;
                }
                const OffsetPrediction off =
                    fine->localizer.predict(FineInput<float>{text_tokens, it->second});
                pred[0] += off.x;
                pred[1] += off.y;
            }
            preds.push_back(pred);
        }
        rankings.push_back(std::move(cells));
        top1.push_back(preds.front());
        predictions.push_back(std::move(preds));
        gt_cells.push_back(q->cell_id);
        gt_xy.push_back(q->target_xy);
    }

    EvalReport report;
    report.samples = queries.size();
    report.submap_recall = submap_recall_at_k(rankings, gt_cells, EvalReport::submap_ks());
    report.loc_recall =
        localization_recall(predictions, gt_xy, EvalReport::eps_set(), EvalReport::loc_ks());
    report.mean_norm_error = mean_normalized_error(top1, gt_xy);
    return report;
}

} // namespace mambaloc
