#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "clearmap/backproject.hpp"
#include "clearmap/clearviz.hpp"
#include "clearmap/error.hpp"
#include "clearmap/eval.hpp"
#include "clearmap/io.hpp"
#include "clearmap/net.hpp"
#include "clearmap/parallel.hpp"
#include "clearmap/train.hpp"

namespace clearmap::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

namespace detail {

struct Selection {
  std::size_t begin = 0;
  std::size_t end = 1;
};

inline Selection parse_selection(const std::optional<std::size_t>& index, const std::string& range,
                                 std::size_t available) {
  Selection s;
  if (!range.empty()) {
    const auto colon = range.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--range", "expected A:B");
    try {
      s.begin = std::stoul(range.substr(0, colon));
      s.end = std::stoul(range.substr(colon + 1));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--range", "expected A:B with integers");
    }
    if (s.end <= s.begin) throw CLI::ValidationError("--range", "B must exceed A");
  } else if (index) {
    s.begin = *index;
    s.end = *index + 1;
  }
  if (s.end > available) {
    throw ArgumentError("image selection ends at " + std::to_string(s.end) + " but the file holds " +
                        std::to_string(available) + " images");
  }
  return s;
}

inline BackprojectMode parse_mode(const std::string& m) {
  return m == "linear" ? BackprojectMode::Linear : BackprojectMode::Rectified;
}

inline FillRule parse_fill(const std::string& f) {
  if (f == "zero") return FillRule::zero();
  if (f.rfind("gray:", 0) == 0) {
    int level = -1;
    try {
      level = std::stoi(f.substr(5));
    } catch (const std::exception&) {
    }
    if (level < 0 || level > 255) throw CLI::ValidationError("--fill", "gray level must be 0..255");
    return FillRule::gray(static_cast<std::uint8_t>(level));
  }
  throw CLI::ValidationError("--fill", "expected zero or gray:<byte>");
}

inline std::string numbered(const std::string& stem, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.ppm", stem.c_str(), i);
  return buf;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"CLEAR maps: class-enhanced attentive response maps for all-conv classifiers", "clearmap"};
  app.require_subcommand(1, 1);

  std::string spec_path, weights_path, images_path, labels_path, out_path, out_dir;
  std::string mode = "rectified", range, fill = "zero";
  std::optional<std::size_t> index;
  std::size_t limit = 0;
  double threshold = 0.2, alpha = 0.5;
  bool use_overlay = false, ignore_hash = false;
  TrainConfig tc;

  auto* train_cmd = app.add_subcommand("train", "train a network with SGD + momentum");
  train_cmd->add_option("--spec", spec_path, "network description")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--train-images", images_path, "IDX images")->required();
  train_cmd->add_option("--train-labels", labels_path, "IDX labels")->required();
  train_cmd->add_option("--out", out_path, "weight file to write")->required();
  train_cmd->add_option("--epochs", tc.epochs, "epochs")->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate, "learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", tc.momentum, "momentum")->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size, "batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tc.seed, "seed")->capture_default_str();
  train_cmd->add_option("--limit", limit, "use only the first N training images (0 = all)");

  auto* eval_cmd = app.add_subcommand("eval", "report classification accuracy");
  auto* clear_cmd = app.add_subcommand("clear", "write CLEAR maps");
  auto* heat_cmd = app.add_subcommand("heatmap", "write binary heatmaps and binary maps");
  auto* occl_cmd = app.add_subcommand("occlude", "strong-feature occlusion experiment");
  for (auto* cmd : {eval_cmd, clear_cmd, heat_cmd, occl_cmd}) {
    cmd->add_option("--spec", spec_path, "network description")->required()->check(CLI::ExistingFile);
    cmd->add_option("--weights", weights_path, "CLRW weight file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--images", images_path, "IDX images")->required();
    cmd->add_flag("--ignore-hash", ignore_hash, "accept weights saved for a different spec");
  }
  for (auto* cmd : {eval_cmd, occl_cmd}) {
    cmd->add_option("--labels", labels_path, "IDX labels")->required();
    cmd->add_option("--limit", limit, "use only the first N images (0 = all)");
  }
  heat_cmd->add_option("--labels", labels_path, "IDX labels (true class; predicted class when absent)");
  for (auto* cmd : {clear_cmd, heat_cmd}) {
    auto* idx = cmd->add_option("--index", index, "single image index");
    cmd->add_option("--range", range, "images A..B-1 as A:B")->excludes(idx);
    cmd->add_option("--mode", mode, "back-projection mode")
        ->capture_default_str()
        ->check(CLI::IsMember({"rectified", "linear"}));
    cmd->add_option("--out-dir", out_dir, "output directory")->required();
    cmd->add_flag("--overlay", use_overlay, "blend the map over the input image");
    cmd->add_option("--alpha", alpha, "overlay opacity")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  }
  occl_cmd->add_option("--threshold", threshold, "strong-feature threshold fraction")->capture_default_str();
  occl_cmd->add_option("--fill", fill, "zero or gray:<byte>")->capture_default_str();
  occl_cmd->add_option("--mode", mode, "back-projection mode")
      ->capture_default_str()
      ->check(CLI::IsMember({"rectified", "linear"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    const NetworkSpec spec = load_network_spec(spec_path);

    if (*train_cmd) {
      const Dataset data = take(load_idx_pair(images_path, labels_path), limit);
      auto result = train(Network(spec), data, tc, &out);
      save_weights(result.net, out_path);
      out << "saved " << out_path << "\n";
      return kOk;
    }

    const Network net = load_weights(spec, weights_path, ignore_hash);

    if (*eval_cmd) {
      const Dataset data = take(load_idx_pair(images_path, labels_path), limit);
      const double acc = evaluate_accuracy(net, data);
      out << "n " << data.size() << "\n" << "acc " << detail::fixed(acc, 3) << "\n";
      return kOk;
    }

    if (*occl_cmd) {
      if (!(threshold > 0.0 && threshold < 1.0)) throw CLI::ValidationError("--threshold", "must lie in (0, 1)");
      OcclusionConfig cfg;
      cfg.threshold_frac = threshold;
      cfg.fill = detail::parse_fill(fill);
      cfg.response_mode = detail::parse_mode(mode);
      const Dataset data = take(load_idx_pair(images_path, labels_path), limit);
      out << format_report(run_occlusion_experiment(net, data, cfg));
      return kOk;
    }

    // clear / heatmap
    const bool is_clear = static_cast<bool>(*clear_cmd);
    const auto images = load_idx_images(images_path);
    std::vector<std::size_t> labels;
    if (!labels_path.empty()) {
      labels = load_idx_labels(labels_path);
      if (labels.size() != images.size()) throw CountMismatchError("image and label counts differ");
    }
    const auto sel = detail::parse_selection(index, range, images.size());
    const auto bp_mode = detail::parse_mode(mode);
    const ColorMap colors = ColorMap::evenly_spaced(net.num_classes());
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);

    struct Rendered {
      Prediction pred;
      RgbImage first, second;
    };
    const std::size_t count = sel.end - sel.begin;
    std::vector<Rendered> rendered(count);
    parallel_for(count, [&](std::size_t k) {
      const std::size_t i = sel.begin + k;
      const ForwardTrace trace = forward(net, images[i]);
      const ResponseStack stack = attentive_response_all(net, trace, bp_mode);
      Rendered& r = rendered[k];
      r.pred = argmax_prediction(trace.probabilities);
      if (is_clear) {
        r.first = compose_clear(make_clear_map(stack), colors);
        if (use_overlay) r.first = overlay(images[i], r.first, alpha);
      } else {
        const std::size_t truth = labels.empty() ? r.pred.label : labels[i];
        r.first = binary_heatmap(stack, truth);
        r.second = binary_map(stack, truth);
        if (use_overlay) {
          r.first = overlay(images[i], r.first, alpha);
          r.second = overlay(images[i], r.second, alpha);
        }
      }
    });
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = sel.begin + k;
      const auto& r = rendered[k];
      if (is_clear) {
        write_image(r.first, (dir / detail::numbered("clear", i)).string());
      } else {
        write_image(r.first, (dir / detail::numbered("heatmap", i)).string());
        write_image(r.second, (dir / detail::numbered("binmap", i)).string());
      }
      out << "image " << i << " predicted " << r.pred.label << " confidence "
          << detail::fixed(r.pred.confidence, 4);
      if (!labels.empty()) out << " label " << labels[i];
      out << "\n";
    }
    if (is_clear) write_image(legend_strip(colors), (dir / "legend.ppm").string());
    return kOk;
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace clearmap::cli
