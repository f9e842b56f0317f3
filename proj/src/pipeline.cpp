#include "s3pet/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "s3pet/pvol.hpp"

namespace s3pet {

PhantomSpec phantom_spec_from(const Config& cfg) {
  PhantomSpec spec;
  spec.n_ellipses_min = static_cast<int>(cfg.get_int("data.n_ellipses_min"));
  spec.n_ellipses_max = static_cast<int>(cfg.get_int("data.n_ellipses_max"));
  spec.intensity_levels = cfg.get_list("data.intensity_levels");
  spec.background = cfg.get_num("data.background");
  spec.slice_size = static_cast<int>(cfg.get_int("data.slice_size"));
  spec.volume_depth = static_cast<int>(cfg.get_int("data.volume_depth"));
  spec.patch_size = static_cast<int>(cfg.get_int("model.P"));
  return spec;
}

DoseParams dose_params_from(const Config& cfg) {
  DoseParams dose;
  dose.drf = cfg.get_num("data.drf");
  dose.counts_per_unit = cfg.get_num("data.counts_per_unit");
  dose.blur_sigma = cfg.get_num("data.blur_sigma");
  return dose;
}

SplitConfig split_config_from(const Config& cfg) {
  SplitConfig split;
  split.unpaired_spet = static_cast<int>(cfg.get_int("data.unpaired_spet"));
  split.lpet_pretrain = static_cast<int>(cfg.get_int("data.lpet_pretrain"));
  split.paired_train = static_cast<int>(cfg.get_int("data.paired_train"));
  split.paired_eval = static_cast<int>(cfg.get_int("data.paired_eval"));
  return split;
}

TrainConfig train_config_from(const Config& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.dims.d = static_cast<int>(cfg.get_int("model.d"));
  tc.dims.t_blocks = static_cast<int>(cfg.get_int("model.T"));
  tc.dims.h = static_cast<int>(cfg.get_int("model.h"));
  tc.dims.p = static_cast<int>(cfg.get_int("model.P"));
  tc.dims.slice = static_cast<int>(cfg.get_int("data.slice_size"));
  tc.dims.keep_l = cfg.get_num("model.keep_ratio_l");
  tc.dims.keep_s = cfg.get_num("model.keep_ratio_s");
  tc.weights.gamma = cfg.get_num("loss.gamma");
  tc.weights.lambda1 = cfg.get_num("loss.lambda1");
  tc.weights.lambda2 = cfg.get_num("loss.lambda2");
  tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  tc.lr = cfg.get_num("train.lr");
  tc.stage1_epochs = static_cast<int>(cfg.get_int("train.stage1_epochs"));
  tc.stage2_epochs = static_cast<int>(cfg.get_int("train.stage2_epochs"));
  tc.stage1_steps = static_cast<int>(cfg.get_int("train.stage1_steps"));
  tc.stage2_steps = static_cast<int>(cfg.get_int("train.stage2_steps"));
  tc.seed = seed;
  tc.config_hash = cfg.hash();
  validate_train_config(tc);
  return tc;
}

std::vector<Mat<float>> load_slices(const std::string& dir,
                                    const std::vector<std::string>& ids, bool lpet) {
  std::vector<Mat<float>> out;
  for (const auto& id : ids) {
    const ImageVolume vol =
        read_volume(lpet ? lpet_path(dir, id) : spet_path(dir, id));
    for (auto& s : volume_slices<float>(vol)) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::pair<Mat<float>, Mat<float>>> load_pairs(
    const std::string& dir, const std::vector<std::string>& ids) {
  std::vector<std::pair<Mat<float>, Mat<float>>> out;
  for (const auto& id : ids) {
    const ImageVolume l = read_volume(lpet_path(dir, id));
    const ImageVolume s = read_volume(spet_path(dir, id));
    if (!l.same_shape(s)) {
      throw ShapeError("paired volumes " + id + " have different shapes");
    }
    for (int k = 0; k < l.depth; ++k) {
      out.emplace_back(volume_slice<float>(l, k), volume_slice<float>(s, k));
    }
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  for (const auto& l : lines) os << l << '\n';
}

void cmd_gen_data(const Config& cfg, const std::string& out_dir, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  generate_dataset(out_dir, split_config_from(cfg), phantom_spec_from(cfg),
                   dose_params_from(cfg), seed);
}

void cmd_pretrain(const Config& cfg, const std::string& data_dir,
                  const std::string& out_dir, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  const SplitManifest manifest = read_manifest(data_dir + "/manifest.tsv");
  const TrainConfig tc = train_config_from(cfg, seed);
  const std::string dose = cfg.get_str("train.dose");
  if (dose != "L" && dose != "S" && dose != "both") {
    throw ConfigError("train.dose must be L, S or both");
  }
  if (dose == "S" || dose == "both") {
    const auto slices = load_slices(data_dir, manifest.unpaired_spet, /*lpet=*/false);
    Stage1Result res = pretrain_stage1<float>(slices, 'S', tc);
    save_checkpoint(out_dir + "/ckpt_S.s3c", res.ckpt);
    write_lines(out_dir + "/pretrain_S.csv", res.log);
  }
  if (dose == "L" || dose == "both") {
    const auto slices = load_slices(data_dir, manifest.lpet_pretrain, /*lpet=*/true);
    Stage1Result res = pretrain_stage1<float>(slices, 'L', tc);
    save_checkpoint(out_dir + "/ckpt_L.s3c", res.ckpt);
    write_lines(out_dir + "/pretrain_L.csv", res.log);
  }
}

void cmd_finetune(const Config& cfg, const std::string& data_dir,
                  const std::string& out_dir, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  const SplitManifest manifest = read_manifest(data_dir + "/manifest.tsv");
  const TrainConfig tc = train_config_from(cfg, seed);
  const Checkpoint ckpt_l = load_checkpoint(out_dir + "/ckpt_L.s3c");
  const Checkpoint ckpt_s = load_checkpoint(out_dir + "/ckpt_S.s3c");
  const auto pairs = load_pairs(data_dir, manifest.paired_train);
  Stage2Result res = finetune_stage2<float>(pairs, ckpt_l, ckpt_s, tc);
  save_checkpoint(out_dir + "/ckpt_stage2.s3c", res.ckpt);
  write_lines(out_dir + "/finetune.csv", res.log);
}

void cmd_infer(const Config& cfg, const std::string& in_pvol,
               const std::string& out_pvol) {
  const std::string ckpt_path = cfg.get_str("eval.checkpoint");
  if (ckpt_path.empty()) throw ConfigError("infer: eval.checkpoint is required");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const ImageVolume lpet = read_volume(in_pvol);
  write_volume(out_pvol, infer(lpet, ckpt));
}

void cmd_eval(const Config& cfg, const std::string& pred_pvol,
              const std::string& out_csv) {
  const std::string ref_path = cfg.get_str("eval.ref");
  if (ref_path.empty()) throw ConfigError("eval: eval.ref is required");
  const ImageVolume pred = read_volume(pred_pvol);
  const ImageVolume ref = read_volume(ref_path);
  std::vector<MetricReport> rows;
  rows.push_back({"pred", psnr(pred, ref), ssim(pred, ref), nmse(pred, ref)});
  const std::string baseline_path = cfg.get_str("eval.baseline");
  if (!baseline_path.empty()) {
    const ImageVolume lpet = read_volume(baseline_path);
    rows.push_back({"lpet", psnr(lpet, ref), ssim(lpet, ref), nmse(lpet, ref)});
  }
  write_metrics_csv(out_csv, rows);
}

std::vector<VariantResult> run_ablation(const Config& cfg, const std::string& data_dir,
                                        std::uint64_t seed) {
  const SplitManifest manifest = read_manifest(data_dir + "/manifest.tsv");
  const TrainConfig tc = train_config_from(cfg, seed);

  // Stage-I checkpoints are shared across the variants that initialize from
  // them (2-4); the baseline trains from scratch.
  const auto spet_slices = load_slices(data_dir, manifest.unpaired_spet, false);
  const auto lpet_slices = load_slices(data_dir, manifest.lpet_pretrain, true);
  const Stage1Result pre_s = pretrain_stage1<float>(spet_slices, 'S', tc);
  const Stage1Result pre_l = pretrain_stage1<float>(lpet_slices, 'L', tc);

  const auto pairs = load_pairs(data_dir, manifest.paired_train);

  std::vector<VariantResult> results;
  for (Variant v : {Variant::baseline, Variant::dsmae, Variant::dsmae_dkd, Variant::full}) {
    Stage2Model<float> model = build_stage2_model<float>(
        tc, v, v == Variant::baseline ? nullptr : &pre_l.ckpt,
        v == Variant::baseline ? nullptr : &pre_s.ckpt);
    std::int64_t steps = 0;
    train_stage2(model, pairs, tc, &steps);
    Checkpoint ckpt = stage2_checkpoint(model, tc, steps);

    double psnr_acc = 0.0, ssim_acc = 0.0, nmse_acc = 0.0;
    for (const auto& id : manifest.paired_eval) {
      const ImageVolume lpet = read_volume(lpet_path(data_dir, id));
      const ImageVolume spet = read_volume(spet_path(data_dir, id));
      const ImageVolume rpet = infer(lpet, ckpt);
      psnr_acc += psnr(rpet, spet);
      ssim_acc += ssim(rpet, spet);
      nmse_acc += nmse(rpet, spet);
    }
    const double n = double(manifest.paired_eval.size());
    results.push_back({variant_name(v), psnr_acc / n, ssim_acc / n, nmse_acc / n});
  }
  return results;
}

void cmd_ablate(const Config& cfg, const std::string& data_dir,
                const std::string& out_dir, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  const auto results = run_ablation(cfg, data_dir, seed);
  std::vector<std::string> lines;
  lines.push_back("variant,psnr,ssim,nmse");
  for (const auto& r : results) {
    lines.push_back(r.name + "," + format_metric(r.psnr) + "," + format_metric(r.ssim) +
                    "," + format_metric(r.nmse));
  }
  write_lines(out_dir + "/ablation.csv", lines);
}

GradCheckReport cmd_gradcheck(std::uint64_t seed) {
  return gradient_check<double>(seed);
}

}  // namespace s3pet
