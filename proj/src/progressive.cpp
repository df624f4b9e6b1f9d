#include "matchgan/progressive.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <torch/torch.h>

#include "matchgan/errors.hpp"

namespace matchgan {

std::string to_string(Phase phase) { return phase == Phase::transition ? "transition" : "stabilization"; }

void validate(const GrowthState& s) {
    if (s.stage < 1) throw InvalidArgument("stage must be at least 1");
    if (s.images_per_phase <= 0) throw InvalidArgument("images_per_phase must be positive");
    if (s.stage == 1 && s.phase == Phase::transition) throw InvalidArgument("stage 1 has no transition phase");
    if (s.images_seen_in_phase < 0 || s.images_seen_in_phase > s.images_per_phase)
        throw InvalidArgument("images_seen_in_phase outside [0, images_per_phase]");
}

GrowthState initial_growth_state(std::int64_t images_per_phase) {
    GrowthState s;
    s.images_per_phase = images_per_phase;
    validate(s);
    return s;
}

FadeWeight fade_alpha(const GrowthState& s) {
    if (s.phase == Phase::stabilization) return {1.0};
    return {static_cast<double>(s.images_seen_in_phase) / static_cast<double>(s.images_per_phase)};
}

GrowthState advance(GrowthState s, std::int64_t n_images, int max_stage) {
    validate(s);
    if (n_images < 0) throw InvalidArgument("n_images must be nonnegative");
    if (max_stage < s.stage) throw InvalidArgument("max_stage below current stage");
    while (n_images > 0) {
        const auto room = s.images_per_phase - s.images_seen_in_phase;
        if (s.phase == Phase::stabilization && s.stage == max_stage) {
            s.images_seen_in_phase += std::min(room, n_images);
            break;
        }
        if (n_images < room) {
            s.images_seen_in_phase += n_images;
            break;
        }
        n_images -= room;
        s.images_seen_in_phase = 0;
        if (s.phase == Phase::transition) {
            s.phase = Phase::stabilization;
        } else {
            ++s.stage;
            s.phase = Phase::transition;
        }
    }
    return s;
}

bool fully_trained(const GrowthState& s, int max_stage) {
    return s.stage == max_stage && s.phase == Phase::stabilization && s.images_seen_in_phase == s.images_per_phase;
}

std::int64_t images_to_train(int stages, std::int64_t images_per_phase) {
    if (stages < 1) throw InvalidArgument("need at least one stage");
    return (2 * static_cast<std::int64_t>(stages) - 1) * images_per_phase;
}

int stage_resolution(int stage, int base_resolution) {
    if (stage < 1) throw InvalidArgument("stage must be at least 1");
    return base_resolution << (stage - 1);
}

std::vector<PhaseRow> phase_table(int max_stage, std::int64_t images_per_phase, int base_resolution,
                                  BatchSchedule batches) {
    if (max_stage < 1) throw InvalidArgument("max_stage must be at least 1");
    std::vector<PhaseRow> rows;
    auto state = initial_growth_state(images_per_phase);
    std::int64_t cursor = 0;
    while (true) {
        PhaseRow row;
        row.stage = state.stage;
        row.phase = state.phase;
        row.resolution = stage_resolution(state.stage, base_resolution);
        row.image_begin = cursor;
        row.image_end = cursor + images_per_phase;
        row.alpha_begin = fade_alpha(state).value;
        auto mid = state;
        mid.images_seen_in_phase = images_per_phase / 2;
        row.alpha_mid = fade_alpha(mid).value;
        auto end = state;
        end.images_seen_in_phase = images_per_phase;
        row.alpha_end = fade_alpha(end).value;
        row.batch_size = batches.batch_for(row.resolution);
        rows.push_back(row);
        cursor += images_per_phase;
        const auto next = advance(state, images_per_phase, max_stage);
        if (fully_trained(next, max_stage)) break;
        state = next;
    }
    return rows;
}

std::string format_phase_table(const std::vector<PhaseRow>& rows) {
    std::ostringstream out;
    out << "stage\tphase\tresolution\timage_begin\timage_end\talpha_begin\talpha_mid\talpha_end\tbatch_size\n";
    char buf[32];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        out << r.stage << '\t' << to_string(r.phase) << '\t' << r.resolution << '\t' << r.image_begin << '\t'
            << r.image_end << '\t' << fmt(r.alpha_begin) << '\t' << fmt(r.alpha_mid) << '\t' << fmt(r.alpha_end)
            << '\t' << r.batch_size << '\n';
    }
    return out.str();
}

torch::Tensor blend_generator_output(const torch::Tensor& prev_rgb, const torch::Tensor& new_rgb, FadeWeight alpha) {
    if (prev_rgb.dim() != 4 || new_rgb.dim() != 4) throw InvalidArgument("blend expects N x C x H x W tensors");
    if (prev_rgb.size(0) != new_rgb.size(0) || prev_rgb.size(1) != new_rgb.size(1) ||
        prev_rgb.size(2) * 2 != new_rgb.size(2) || prev_rgb.size(3) * 2 != new_rgb.size(3))
        throw InvalidArgument("previous-stage image must be exactly half the new resolution");
    if (!(alpha.value >= 0.0 && alpha.value <= 1.0)) throw InvalidArgument("fade weight outside [0, 1]");
    const auto up = prev_rgb.repeat_interleave(2, 2).repeat_interleave(2, 3);
    if (alpha.value == 0.0) return up;
    if (alpha.value == 1.0) return new_rgb;
    return (1.0 - alpha.value) * up + alpha.value * new_rgb;
}

torch::Tensor blend_critic_paths(const torch::Tensor& full_path, const torch::Tensor& downscaled_path, FadeWeight alpha) {
    if (full_path.sizes() != downscaled_path.sizes()) throw InvalidArgument("critic paths differ in shape");
    if (!(alpha.value >= 0.0 && alpha.value <= 1.0)) throw InvalidArgument("fade weight outside [0, 1]");
    if (alpha.value == 0.0) return downscaled_path;
    if (alpha.value == 1.0) return full_path;
    return alpha.value * full_path + (1.0 - alpha.value) * downscaled_path;
}

}  // namespace matchgan
