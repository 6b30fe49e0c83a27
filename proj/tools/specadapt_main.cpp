#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "common/errors.hpp"
#include "pipeline/manifest.hpp"
#include "pipeline/presets.hpp"
#include "pipeline/stages.hpp"

namespace {

constexpr const char* kOutRootEnv = "SPECADAPT_OUT";

pipeline::ExperimentManifest load_manifest(const std::string& path) {
  auto manifest = pipeline::ExperimentManifest::load(path);
  if (const char* root = std::getenv(kOutRootEnv); root != nullptr && root[0] != '\0') {
    manifest.out_root = root;
  }
  return manifest;
}

void run_preset(corpus::GeneratorKind domain, std::string out_root, std::uint64_t seed,
                const std::string& scale) {
  if (out_root.empty()) {
    if (const char* root = std::getenv(kOutRootEnv); root != nullptr && root[0] != '\0') {
      out_root = root;
    } else {
      throw err::UsageError("output root required: pass --out or set " +
                            std::string(kOutRootEnv));
    }
  }
  pipeline::PresetScale preset_scale;
  if (scale == "full") {
    preset_scale = pipeline::PresetScale::full;
  } else if (scale == "quick") {
    preset_scale = pipeline::PresetScale::quick;
  } else {
    throw err::UsageError("unknown --scale '" + scale + "' (expected full or quick)");
  }
  const auto manifest = pipeline::make_transfer_preset(domain, out_root, seed, preset_scale);
  manifest.save(manifest.artifact(pipeline::artifact_paths::manifest));
  for (const std::string& stage : pipeline::stage_names()) {
    std::cout << "[stage] " << stage << "\n" << std::flush;
    pipeline::run_stage(manifest, stage);
  }
  std::cout << "metrics written under " << manifest.artifact("metrics").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speculative decoding with shared/private gated draft adaptation"};
  app.require_subcommand(1);

  // One subcommand per pipeline stage, all manifest-driven.
  std::string manifest_path;
  for (const std::string& stage : pipeline::stage_names()) {
    auto* sub = app.add_subcommand(stage, "run the '" + stage + "' stage of a manifest");
    sub->add_option("--manifest", manifest_path, "experiment manifest (json)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->callback([stage, &manifest_path] {
      pipeline::run_stage(load_manifest(manifest_path), stage);
    });
  }

  struct PresetArgs {
    std::string out;
    std::uint64_t seed = 20240801;
    std::string scale = "full";
  };
  auto add_preset = [&app](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    auto args = std::make_shared<PresetArgs>();
    sub->add_option("--out", args->out, "output root directory (or set SPECADAPT_OUT)");
    sub->add_option("--seed", args->seed, "global experiment seed")->capture_default_str();
    sub->add_option("--scale", args->scale, "full or quick")->capture_default_str();
    return std::pair{sub, args};
  };
  {
    auto [sub, args] = add_preset("preset-math-transfer",
                                  "base text -> arithmetic transfer experiment");
    sub->callback([args] {
      run_preset(corpus::GeneratorKind::arithmetic, args->out, args->seed, args->scale);
    });
  }
  {
    auto [sub, args] = add_preset("preset-code-transfer",
                                  "base text -> bracket-code transfer experiment");
    sub->callback([args] {
      run_preset(corpus::GeneratorKind::bracket_code, args->out, args->seed, args->scale);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "usage-error: " << e.what() << "\n";
    return 2;
  } catch (const err::Error& e) {
    std::cerr << e.error_class() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal-error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
