#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s3pet/config.hpp"
#include "s3pet/datagen.hpp"
#include "s3pet/metrics.hpp"
#include "s3pet/trainer.hpp"

namespace s3pet {

PhantomSpec phantom_spec_from(const Config& cfg);
DoseParams dose_params_from(const Config& cfg);
SplitConfig split_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg, std::uint64_t seed);

/// All 2D slices of the listed volumes, in manifest order.
std::vector<Mat<float>> load_slices(const std::string& dir,
                                    const std::vector<std::string>& ids, bool lpet);
std::vector<std::pair<Mat<float>, Mat<float>>> load_pairs(
    const std::string& dir, const std::vector<std::string>& ids);

// Command bodies behind the CLI; they throw on error.
void cmd_gen_data(const Config& cfg, const std::string& out_dir, std::uint64_t seed);
void cmd_pretrain(const Config& cfg, const std::string& data_dir,
                  const std::string& out_dir, std::uint64_t seed);
void cmd_finetune(const Config& cfg, const std::string& data_dir,
                  const std::string& out_dir, std::uint64_t seed);
void cmd_infer(const Config& cfg, const std::string& in_pvol,
               const std::string& out_pvol);
void cmd_eval(const Config& cfg, const std::string& pred_pvol,
              const std::string& out_csv);

struct VariantResult {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double nmse = 0.0;
};

/// Trains and evaluates the four progressive variants on one seed; Stage-I
/// checkpoints are shared by every variant that uses them.
std::vector<VariantResult> run_ablation(const Config& cfg, const std::string& data_dir,
                                        std::uint64_t seed);

void cmd_ablate(const Config& cfg, const std::string& data_dir,
                const std::string& out_dir, std::uint64_t seed);

/// Returns the report; the CLI turns the threshold into an exit status.
GradCheckReport cmd_gradcheck(std::uint64_t seed);

void write_lines(const std::string& path, const std::vector<std::string>& lines);

}  // namespace s3pet
