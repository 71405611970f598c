#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "curate/error.hpp"
#include "curate/pipeline.hpp"

namespace {

int exit_code(curate::ErrorKind kind) {
  switch (kind) {
    case curate::ErrorKind::config: return 2;
    case curate::ErrorKind::backend: return 3;
    case curate::ErrorKind::missing_artifact: return 4;
    default: return 1;
  }
}

void print_summary(const curate::RunSummary& summary, bool dry_run) {
  for (const auto& s : summary.stages) {
    const char* verb = s.executed ? (dry_run ? "would run" : "ran") : "skipped";
    std::cout << curate::to_string(s.stage) << ": " << verb << " (" << s.reason << ")";
    if (!dry_run && s.executed) {
      std::cout << " backend_calls=" << s.counters.value("backend_calls", std::size_t{0});
      if (s.counters.contains("cache_hits")) std::cout << " cache_hits=" << s.counters["cache_hits"].get<std::size_t>();
    }
    std::cout << "\n";
  }
  if (!dry_run) std::cout << "total backend calls: " << summary.backend_calls() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence-driven instruction-data curation"};
  app.require_subcommand(1);

  std::string config_path;
  bool dry_run = false;
  std::vector<std::pair<std::string, CLI::App*>> commands;

  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config,-c", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_flag("--dry-run", dry_run, "print the plan without executing");
    commands.emplace_back(name, sub);
  };
  add("run", "run every stage whose inputs changed");
  add("ingest", "load and validate the corpus");
  add("embed", "embed every sample");
  add("probes", "build per-candidate probe sets");
  add("score", "compute IFD and weighted ICI");
  add("select", "diversity-aware greedy selection");
  add("analyze", "IFD vs ICI consistency");
  add("judge", "pairwise judge evaluation");
  add("report", "write the run report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    auto cfg = curate::PipelineConfig::load(config_path);
    curate::Pipeline pipeline(std::move(cfg));
    for (const auto& [name, sub] : commands) {
      if (!sub->parsed()) continue;
      if (name == "run") {
        print_summary(pipeline.run_all(dry_run), dry_run);
        if (!dry_run) std::cout << "\n" << pipeline.report_text();
      } else {
        auto stage = curate::stage_from_string(name);
        print_summary(pipeline.run_stage(*stage, dry_run), dry_run);
        if (!dry_run && *stage == curate::Stage::report) std::cout << "\n" << pipeline.report_text();
      }
    }
  } catch (const curate::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
