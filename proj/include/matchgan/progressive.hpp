#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/types.h>

namespace matchgan {

enum class Phase { transition, stabilization };

std::string to_string(Phase phase);

// Progressive-training cursor. Stage 1 is trained from scratch and so only
// has a stabilization phase.
struct GrowthState {
    int stage = 1;
    Phase phase = Phase::stabilization;
    std::int64_t images_seen_in_phase = 0;
    std::int64_t images_per_phase = 20000;

    bool operator==(const GrowthState&) const = default;
};

// Throws InvalidArgument when the state breaks its invariants.
void validate(const GrowthState& state);

GrowthState initial_growth_state(std::int64_t images_per_phase);

struct FadeWeight {
    double value = 1.0;
};

// images_seen / images_per_phase while transitioning, 1 while stabilising.
FadeWeight fade_alpha(const GrowthState& state);

// Feeds `n_images` through the state machine. Excess images roll into the
// next phase; at max_stage the stabilization counter saturates.
GrowthState advance(GrowthState state, std::int64_t n_images, int max_stage);

bool fully_trained(const GrowthState& state, int max_stage);

// Images needed from scratch to finish stabilising stage k: (2k - 1) phases.
std::int64_t images_to_train(int stages, std::int64_t images_per_phase);

int stage_resolution(int stage, int base_resolution = 4);

struct BatchSchedule {
    int low_resolution_batch = 16;
    int high_resolution_batch = 8;
    // Largest resolution still trained with the low-resolution batch size.
    int threshold_resolution = 64;

    int batch_for(int resolution) const {
        return resolution <= threshold_resolution ? low_resolution_batch : high_resolution_batch;
    }
};

struct PhaseRow {
    int stage = 1;
    Phase phase = Phase::stabilization;
    int resolution = 4;
    std::int64_t image_begin = 0;
    std::int64_t image_end = 0;
    double alpha_begin = 1.0;
    double alpha_mid = 1.0;
    double alpha_end = 1.0;
    int batch_size = 16;
};

std::vector<PhaseRow> phase_table(int max_stage, std::int64_t images_per_phase, int base_resolution = 4,
                                  BatchSchedule batches = {});

// Header line plus one tab-separated line per phase.
std::string format_phase_table(const std::vector<PhaseRow>& rows);

// (1 - alpha) * nearest_upscale(prev_rgb) + alpha * new_rgb.
torch::Tensor blend_generator_output(const torch::Tensor& prev_rgb, const torch::Tensor& new_rgb, FadeWeight alpha);

// alpha * full_path + (1 - alpha) * downscaled_path at the critic junction.
torch::Tensor blend_critic_paths(const torch::Tensor& full_path, const torch::Tensor& downscaled_path, FadeWeight alpha);

}  // namespace matchgan
