// dsreg command-line front end.
//
//   dsreg register --latent A --rolled B --out D [--templates T] [--config C]
//   dsreg template --image I --side latent|rolled --out D [--roi R]
//   dsreg simulate --rolled I --profile P --count K --seed S --out D
//   dsreg eval     --result J --gt-latent L --gt-rolled R --out D
//   dsreg score    --result J --latent A --rolled B --out D
//
// Exit codes: 0 ok, 1 registration failed, 2 bad input, 3 internal error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "dsreg/dsreg.hpp"

namespace fs = std::filesystem;
using namespace dsreg;

namespace {

enum ExitCode { kOk = 0, kRegistrationFailed = 1, kBadInput = 2, kInternal = 3 };

struct BadInput : Error {
  using Error::Error;
};

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw BadInput("no such file: " + path);
}

GrayImage load_image(const std::string& path) {
  require_file(path);
  return load_gray_image(path);
}

RoiMask load_or_compute_roi(const std::string& roiPath, const GrayImage& img) {
  if (roiPath.empty()) return compute_roi(img);
  require_file(roiPath);
  RoiMask roi = load_roi_mask(roiPath);
  if (!same_shape(img, roi)) throw BadInput(roiPath + ": mask size differs from its image");
  return roi;
}

nlohmann::json read_json(const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// overlay

void draw_line(RgbImage& img, Vec2 a, Vec2 b, const std::array<std::uint8_t, 3>& c) {
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    img.set(static_cast<int>(std::lround(a.x + t * (b.x - a.x))), static_cast<int>(std::lround(a.y + t * (b.y - a.y))),
            c[0], c[1], c[2]);
  }
}

void draw_dot(RgbImage& img, Vec2 p, const std::array<std::uint8_t, 3>& c) {
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx)
      if (dx * dx + dy * dy <= 4)
        img.set(static_cast<int>(std::lround(p.x)) + dx, static_cast<int>(std::lround(p.y)) + dy, c[0], c[1], c[2]);
}

std::array<std::uint8_t, 3> palette(std::size_t i) {
  static const std::array<std::array<std::uint8_t, 3>, 8> colors{{{230, 25, 75},
                                                                   {60, 180, 75},
                                                                   {0, 130, 200},
                                                                   {245, 130, 48},
                                                                   {145, 30, 180},
                                                                   {70, 200, 200},
                                                                   {240, 50, 230},
                                                                   {128, 128, 0}}};
  return colors[i % colors.size()];
}

/// Latent left, rolled right, one colored segment per correspondence.
RgbImage render_overlay(const GrayImage& latent, const GrayImage& rolled, const CorrespondenceSet* set) {
  const int gap = 10;
  const int w = latent.width() + gap + rolled.width();
  const int h = std::max(latent.height(), rolled.height());
  RgbImage out(w, h);
  auto paste = [&](const GrayImage& g, int ox) {
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        const std::uint8_t v = g.at(x, y);
        out.set(ox + x, y, v, v, v);
      }
  };
  paste(latent, 0);
  paste(rolled, latent.width() + gap);
  if (!set) return out;
  const Vec2 shift{static_cast<double>(latent.width() + gap), 0.0};
  for (std::size_t i = 0; i < set->selected.size(); ++i) {
    const auto& c = set->selected[i];
    const auto col = palette(i);
    draw_line(out, c.latentPoint.pos, c.rolledPoint.pos + shift, col);
    draw_dot(out, c.latentPoint.pos, col);
    draw_dot(out, c.rolledPoint.pos + shift, col);
  }
  return out;
}

/// Latent resampled into the rolled frame: TPS when the precise stage
/// produced one, the final rigid otherwise.
std::optional<WarpedImage> warp_latent(const RegistrationResult& r, const GrayImage& latent, const RoiMask& latentRoi,
                                       int width, int height) {
  if (r.tps) return apply_transform(*r.tps, latent, latentRoi, width, height);
  if (r.final) return apply_transform(*r.final, latent, latentRoi, width, height);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// subcommands

struct RegisterArgs {
  std::string latent, rolled, latentRoi, rolledRoi, out, templates, config;
  int threads = 1;
  bool timing = false;
};

int run_register(const RegisterArgs& a) {
  PipelineConfig cfg;
  if (!a.config.empty()) cfg = pipeline_config_from_json(read_json(a.config));
  cfg.threads = a.threads;
  cfg.validate();

  const GrayImage latent = load_image(a.latent);
  const GrayImage rolled = load_image(a.rolled);
  const RoiMask latentRoi = load_or_compute_roi(a.latentRoi, latent);
  const RoiMask rolledRoi = load_or_compute_roi(a.rolledRoi, rolled);

  std::optional<TemplateBank> latentBank, rolledBank;
  if (!a.templates.empty()) {
    if (!fs::is_directory(a.templates)) throw BadInput("no such directory: " + a.templates);
    auto load = [&](const char* name, Side side) -> std::optional<TemplateBank> {
      const fs::path p = fs::path(a.templates) / name;
      if (!fs::exists(p)) return std::nullopt;
      std::ifstream in(p, std::ios::binary);
      TemplateBank bank = read_template_bank(in);
      if (bank.side != side) throw BadInput(p.string() + ": bank side mismatch");
      return bank;
    };
    latentBank = load("latent.drtb", Side::Latent);
    rolledBank = load("rolled.drtb", Side::Rolled);
  }
  TemplateSet templates;
  templates.latent = latentBank ? &*latentBank : nullptr;
  templates.rolled = rolledBank ? &*rolledBank : nullptr;

  const RegistrationResult r = register_images(latent, latentRoi, rolled, rolledRoi, cfg, templates);

  const fs::path out(a.out);
  fs::create_directories(out);
  {
    std::ostringstream tsv;
    const CorrespondenceSet empty;
    const auto* best = r.best_correspondences();
    write_correspondences_tsv(tsv, best ? *best : empty);
    write_text(out / "correspondences.tsv", tsv.str());
  }
  write_text(out / "result.json", to_json(r, "correspondences.tsv", a.timing).dump(2) + "\n");
  if (auto w = warp_latent(r, latent, latentRoi, rolled.width(), rolled.height()))
    save_png(w->image, (out / "warped_latent.png").string());
  else
    save_png(GrayImage(rolled.width(), rolled.height(), 255), (out / "warped_latent.png").string());
  render_overlay(latent, rolled, r.best_correspondences()).save_png((out / "overlay.png").string());

  std::cout << "status " << to_string(r.status) << '\n';
  return r.status == RegistrationStatus::Failed ? kRegistrationFailed : kOk;
}

struct TemplateArgs {
  std::string image, roi, side, out;
  int threads = 1;
};

int run_template(const TemplateArgs& a) {
  const Side side = parse_side(a.side);
  const GrayImage img = load_image(a.image);
  const RoiMask roi = load_or_compute_roi(a.roi, img);
  TemplateConfig cfg;
  cfg.threads = a.threads;
  const TemplateBank bank = build_template(img, roi, estimate_orientation_field(img, roi), side, cfg);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream f(out / (std::string(to_string(side)) + ".drtb"), std::ios::binary);
  write_template_bank(bank, f);
  std::cout << "entries " << bank.entries.size() << '\n';
  return kOk;
}

struct SimulateArgs {
  std::string rolled, rolledRoi, profile, out;
  int count = 1;
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  if (a.count < 1) throw BadInput("--count must be >= 1");
  const GrayImage img = load_image(a.rolled);
  const RoiMask roi = load_or_compute_roi(a.rolledRoi, img);
  require_file(a.profile);
  const DistortionProfile profile = load_profile(a.profile);
  const fs::path out(a.out);
  fs::create_directories(out);
  Rng rng(a.seed);
  const RolledInput input{img, roi, roi_centroid(roi)};
  for (int k = 0; k < a.count; ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "impression_%03d", k);
    const Impression imp = simulate_impression(input, profile, AugmentConfig{}, rng.next());
    save_png(imp.image, (out / (std::string(stem) + ".png")).string());
    save_roi_mask(imp.roi, (out / (std::string(stem) + "_roi.png")).string());
    write_text(out / (std::string(stem) + "_map.json"), to_json(imp.map).dump(2) + "\n");
  }
  std::cout << "impressions " << a.count << '\n';
  return kOk;
}

std::vector<MarkedMinutia> load_minutiae(const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  return read_minutiae_tsv(in);
}

struct EvalArgs {
  std::string result, gtLatent, gtRolled, out;
};

int run_eval(const EvalArgs& a) {
  const RegistrationResult r = registration_from_json(read_json(a.result));
  const auto pairs = pair_minutiae(load_minutiae(a.gtLatent), load_minutiae(a.gtRolled));
  if (pairs.empty()) throw BadInput("no minutia pairs shared by " + a.gtLatent + " and " + a.gtRolled);
  if (!r.final) {
    std::cerr << "registration failed: nothing to evaluate\n";
    return kRegistrationFailed;
  }
  const DeviationReport rep = eval_deviations(pairs, *r.final);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "report.json", to_json(rep).dump(2) + "\n");
  std::ostringstream csv;
  write_cdf_csv(csv, rep);
  write_text(out / "cdf.csv", csv.str());
  std::cout << "accuracy " << rep.accuracyLoc << ' ' << rep.accuracyDir << '\n';
  return kOk;
}

struct ScoreArgs {
  std::string result, latent, rolled, latentRoi, rolledRoi, out;
  int threads = 1;
};

int run_score(const ScoreArgs& a) {
  const RegistrationResult r = registration_from_json(read_json(a.result));
  const GrayImage latent = load_image(a.latent);
  const GrayImage rolled = load_image(a.rolled);
  const RoiMask latentRoi = load_or_compute_roi(a.latentRoi, latent);
  const RoiMask rolledRoi = load_or_compute_roi(a.rolledRoi, rolled);
  MatchingScore s;
  if (const auto w = warp_latent(r, latent, latentRoi, rolled.width(), rolled.height())) {
    const OrientationField field = estimate_orientation_field(rolled, rolledRoi);
    s = matching_score(w->image, w->mask, rolled, rolledRoi, field, r.status == RegistrationStatus::Failed, {}, 24,
                       a.threads);
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  const nlohmann::json j = {{"status", to_string(r.status)},
                            {"score", s.score},
                            {"points", s.perPoint.size()},
                            {"emptyOverlap", s.emptyOverlap}};
  write_text(out / "score.json", j.dump(2) + "\n");
  std::cout << "score " << s.score << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense sampling point registration of ridge images"};
  app.require_subcommand(1);

  RegisterArgs reg;
  auto* cReg = app.add_subcommand("register", "Register a latent image onto a rolled image");
  cReg->add_option("--latent", reg.latent, "Latent image (PNG or PGM)")->required();
  cReg->add_option("--rolled", reg.rolled, "Rolled image (PNG or PGM)")->required();
  cReg->add_option("--latent-roi", reg.latentRoi, "Latent ROI mask; computed when absent");
  cReg->add_option("--rolled-roi", reg.rolledRoi, "Rolled ROI mask; computed when absent");
  cReg->add_option("--out", reg.out, "Output directory")->required();
  cReg->add_option("--templates", reg.templates, "Directory holding latent.drtb and/or rolled.drtb");
  cReg->add_option("--config", reg.config, "Pipeline configuration JSON");
  cReg->add_option("--threads", reg.threads, "Worker threads")->check(CLI::PositiveNumber);
  cReg->add_flag("--timing", reg.timing, "Record stage timings in result.json");

  TemplateArgs tpl;
  auto* cTpl = app.add_subcommand("template", "Precompute a descriptor template bank");
  cTpl->add_option("--image", tpl.image, "Input image")->required();
  cTpl->add_option("--roi", tpl.roi, "ROI mask; computed when absent");
  cTpl->add_option("--side", tpl.side, "latent or rolled")->required()->check(CLI::IsMember({"latent", "rolled"}));
  cTpl->add_option("--out", tpl.out, "Output directory")->required();
  cTpl->add_option("--threads", tpl.threads, "Worker threads")->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* cSim = app.add_subcommand("simulate", "Simulate distorted impressions of a rolled image");
  cSim->add_option("--rolled", sim.rolled, "Rolled image")->required();
  cSim->add_option("--rolled-roi", sim.rolledRoi, "Rolled ROI mask; computed when absent");
  cSim->add_option("--profile", sim.profile, "Distortion profile JSON")->required();
  cSim->add_option("--count", sim.count, "Number of impressions")->required();
  cSim->add_option("--seed", sim.seed, "Random seed")->required();
  cSim->add_option("--out", sim.out, "Output directory")->required();

  EvalArgs ev;
  auto* cEval = app.add_subcommand("eval", "Landmark deviations of a registration result");
  cEval->add_option("--result", ev.result, "result.json from register")->required();
  cEval->add_option("--gt-latent", ev.gtLatent, "Latent minutiae TSV")->required();
  cEval->add_option("--gt-rolled", ev.gtRolled, "Rolled minutiae TSV")->required();
  cEval->add_option("--out", ev.out, "Output directory")->required();

  ScoreArgs sc;
  auto* cScore = app.add_subcommand("score", "Matching score of a registered pair");
  cScore->add_option("--result", sc.result, "result.json from register")->required();
  cScore->add_option("--latent", sc.latent, "Latent image")->required();
  cScore->add_option("--rolled", sc.rolled, "Rolled image")->required();
  cScore->add_option("--latent-roi", sc.latentRoi, "Latent ROI mask; computed when absent");
  cScore->add_option("--rolled-roi", sc.rolledRoi, "Rolled ROI mask; computed when absent");
  cScore->add_option("--out", sc.out, "Output directory")->required();
  cScore->add_option("--threads", sc.threads, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*cReg) return run_register(reg);
    if (*cTpl) return run_template(tpl);
    if (*cSim) return run_simulate(sim);
    if (*cEval) return run_eval(ev);
    if (*cScore) return run_score(sc);
  } catch (const BadInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const EmptyRegionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
