#pragma once

// Command implementations for the fastbss executable. Kept in a header so the
// test suite can drive them in-process.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fftw3.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fastbss/fastbss.hpp"

namespace fastbss::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kNumerical = 4 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return kUsage;
    case ErrorKind::io: return kIo;
    default: return kNumerical;
  }
}

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::io, "cannot open for writing: " + path.string());
  os << std::setprecision(17);
  return os;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string versions() {
  std::ostringstream os;
  os << "fastbss " << kVersion << "; eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.'
     << EIGEN_MINOR_VERSION << "; " << fftw_version << "; cli11 " << CLI11_VERSION << "; gcc " << __VERSION__;
  return os.str();
}

/// Source images in the time domain, trimmed to `length` samples.
inline std::vector<Waveform> to_waveforms(const std::vector<Spectrogram>& images, const StftParams& params,
                                          double sample_rate, std::size_t length) {
  std::vector<Waveform> out;
  for (const auto& img : images) out.push_back(istft(img, params, sample_rate, length));
  return out;
}

// ---------------------------------------------------------------------------

struct SeparateOptions {
  std::string input;
  std::string out = "separated";
  std::string method = "fast-mnmf";
  std::size_t sources = 2;
  std::size_t bases = 16;
  std::size_t iters = 100;
  std::uint64_t seed = 0;
  std::size_t win = 1024;
  std::size_t hop = 256;
  std::size_t threads = 1;
  std::string decoder;
};

inline int cmd_separate(const SeparateOptions& o, std::ostream& log) {
  const auto wall_start = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const auto method = parse_method(o.method);
  require(method.has_value(), "unknown method '" + o.method + "'");
  require(o.sources >= 1, "--sources must be at least 1");
  require(o.iters >= 1, "--iters must be at least 1");
  require(o.threads >= 1, "--threads must be at least 1");
  StftParams params{o.win, o.hop};
  params.validate();

  const Waveform mix = read_wav(o.input);
  const Spectrogram x = stft(mix, params);

  SeparatorConfig cfg;
  cfg.method = *method;
  cfg.sources = o.sources;
  cfg.bases = o.bases;
  cfg.iterations = o.iters;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  if (!o.decoder.empty()) cfg.decoder = std::make_shared<MlpDecoder>(MlpDecoder::load(o.decoder));
  cfg.validate();

  const SeparationResult res = run(cfg, x);
  const auto images = to_waveforms(res.images, params, mix.sample_rate, mix.length());

  const fs::path dir(o.out);
  ensure_dir(dir);
  std::vector<std::string> outputs;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const fs::path p = dir / ("source_" + std::to_string(n) + ".wav");
    write_wav(p.string(), images[n]);
    outputs.push_back(p.string());
  }
  {
    auto os = open_out(dir / "trace.csv");
    os << "iteration,log_likelihood,seconds\n";
    for (std::size_t i = 0; i < res.log_likelihood.size(); ++i)
      os << i + 1 << ',' << res.log_likelihood[i] << ',' << res.seconds[i] << '\n';
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  {
    auto os = open_out(dir / "manifest.txt");
    os << "command=separate\n"
       << "input=" << o.input << "\n"
       << "out=" << o.out << "\n"
       << "method=" << o.method << "\n"
       << "sources=" << o.sources << "\n"
       << "bases=" << o.bases << "\n"
       << "iters=" << o.iters << "\n"
       << "seed=" << o.seed << "\n"
       << "win=" << o.win << "\n"
       << "hop=" << o.hop << "\n"
       << "threads=" << o.threads << "\n"
       << "decoder=" << (o.decoder.empty() ? "toy" : o.decoder) << "\n"
       << "sample_rate=" << mix.sample_rate << "\n"
       << "channels=" << mix.num_channels() << "\n"
       << "samples=" << mix.length() << "\n";
    for (std::size_t n = 0; n < outputs.size(); ++n) os << "output_" << n << '=' << outputs[n] << "\n";
    os << "trace=" << (dir / "trace.csv").string() << "\n"
       << "final_log_likelihood=" << res.log_likelihood.back() << "\n"
       << "versions=" << versions() << "\n"
       << "started_utc=" << started << "\n"
       << "elapsed_seconds=" << elapsed << "\n";
  }
  log << "separated " << o.input << " into " << images.size() << " sources in " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchmarkOptions {
  std::vector<std::string> methods{"mnmf", "fast-mnmf"};
  std::vector<std::size_t> sources{2, 5};
  std::vector<std::size_t> bases{4, 16};
  std::size_t channels = 5;
  double duration = 8.0;
  std::size_t iters = 10;
  std::uint64_t seed = 0;
  std::size_t win = 1024;
  std::size_t hop = 256;
  std::size_t threads = 1;
  std::string out;
};

struct BenchmarkRow {
  std::string method;
  std::size_t sources = 0;
  std::size_t bases = 0;  // 0 when the method has no bases
  TimingStats timing;
  std::size_t iterations = 0;
};

inline std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& o) {
  require(!o.methods.empty() && !o.sources.empty() && !o.bases.empty(), "benchmark: empty grid");
  require(o.channels >= 1, "--channels must be at least 1");
  require(o.duration > 0.0, "--duration must be positive");
  require(o.iters >= 2, "--iters must be at least 2 (the first iteration is excluded)");
  StftParams params{o.win, o.hop};
  params.validate();
  std::vector<Method> methods;
  for (const auto& name : o.methods) {
    const auto m = parse_method(name);
    require(m.has_value(), "unknown method '" + name + "'");
    methods.push_back(*m);
  }
  std::vector<BenchmarkRow> rows;
  for (const std::size_t n : o.sources) {
    require(n >= 1, "--sources entries must be at least 1");
    ScenarioConfig sc;
    sc.sources = n;
    sc.channels = o.channels;
    sc.duration = o.duration;
    sc.seed = o.seed;
    const Spectrogram x = stft(make_scenario(sc).mixture, params);
    for (const Method m : methods) {
      const std::vector<std::size_t> ks = uses_bases(m) ? o.bases : std::vector<std::size_t>{0};
      for (const std::size_t k : ks) {
        SeparatorConfig cfg;
        cfg.method = m;
        cfg.sources = n;
        cfg.bases = std::max<std::size_t>(k, 1);
        cfg.iterations = o.iters;
        cfg.seed = o.seed;
        cfg.threads = o.threads;
        const auto res = run(cfg, x);
        rows.push_back({to_string(m), n, k, timing_stats(res.seconds), res.seconds.size()});
      }
    }
  }
  return rows;
}

inline void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  os << "method,N,K,mean_sec,median_sec,iterations\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.sources << ',';
    if (r.bases == 0) os << '-';
    else os << r.bases;
    os << ',' << r.timing.mean << ',' << r.timing.median << ',' << r.iterations << '\n';
  }
}

inline int cmd_benchmark(const BenchmarkOptions& o, std::ostream& out) {
  const auto rows = run_benchmark(o);
  if (o.out.empty()) {
    write_benchmark_csv(out, rows);
  } else {
    auto os = open_out(o.out);
    write_benchmark_csv(os, rows);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::size_t sources = 2;
  std::size_t channels = 4;
  double duration = 8.0;
  std::uint64_t seed = 0;
  std::size_t rir_length = 256;
  std::string out = "synth";
};

inline int cmd_synth(const SynthOptions& o, std::ostream& log) {
  ScenarioConfig sc;
  sc.sources = o.sources;
  sc.channels = o.channels;
  sc.duration = o.duration;
  sc.seed = o.seed;
  sc.rir_length = o.rir_length;
  const Scenario s = make_scenario(sc);
  const fs::path dir(o.out);
  ensure_dir(dir);
  write_wav((dir / "mixture.wav").string(), s.mixture);
  for (std::size_t n = 0; n < s.images.size(); ++n)
    write_wav((dir / ("reference_" + std::to_string(n) + ".wav")).string(), s.images[n]);
  auto os = open_out(dir / "manifest.txt");
  os << "command=synth\nsources=" << o.sources << "\nchannels=" << o.channels << "\nduration=" << o.duration
     << "\nseed=" << o.seed << "\nrir_length=" << o.rir_length << "\nsample_rate=" << s.mixture.sample_rate
     << "\nversions=" << versions() << "\nstarted_utc=" << utc_now() << "\n";
  log << "wrote mixture and " << s.images.size() << " references to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::vector<std::string> estimates;
  std::vector<std::string> references;
  std::string mixture;
  std::string trace;
  std::string method = "unknown";
  std::size_t channel = 0;
  std::string out;
};

/// Per-iteration seconds from a trace CSV written by `separate`.
inline std::vector<double> read_trace_seconds(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open: " + path);
  std::string line;
  std::getline(is, line);
  std::vector<double> seconds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto pos = line.rfind(',');
    if (pos == std::string::npos) fail(ErrorKind::io, "malformed trace line in " + path);
    try {
      seconds.push_back(std::stod(line.substr(pos + 1)));
    } catch (const std::exception&) {
      fail(ErrorKind::io, "malformed trace line in " + path);
    }
  }
  return seconds;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  require(!o.references.empty(), "eval: need at least one reference");
  std::vector<Waveform> est, ref;
  for (const auto& p : o.estimates) est.push_back(read_wav(p));
  for (const auto& p : o.references) ref.push_back(read_wav(p));
  Waveform mix;
  if (!o.mixture.empty()) {
    mix = read_wav(o.mixture);
  } else {
    mix = ref.front();
    for (std::size_t n = 1; n < ref.size(); ++n) {
      require(ref[n].num_channels() == mix.num_channels() && ref[n].length() == mix.length(),
              "eval: references differ in shape");
      for (std::size_t m = 0; m < mix.num_channels(); ++m)
        for (std::size_t i = 0; i < mix.length(); ++i) mix.channels[m][i] += ref[n].channels[m][i];
    }
  }
  EvalReport report = evaluate(est, ref, mix, o.channel, o.method);
  if (!o.trace.empty()) {
    const auto t = timing_stats(read_trace_seconds(o.trace));
    report.mean_seconds = t.mean;
    report.median_seconds = t.median;
  }
  const EvalReport reports[] = {report};
  if (o.out.empty()) {
    write_report_csv(out, reports);
  } else {
    auto os = open_out(o.out);
    write_report_csv(os, reports);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

/// Fills options of `sub` that were not given on the command line from a
/// key=value file. CLI11 only reads config files for the top-level app, so
/// subcommands do it here.
inline void apply_config(CLI::App& sub, const std::string& path) {
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    CLI::Option* opt = sub.get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config")
      throw CLI::ConfigError("unknown key '" + item.name + "' in " + path);
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

/// Parses argv and dispatches. Library errors are reported on `err` and
/// mapped to exit codes.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multichannel blind source separation (FCA, MNMF and their jointly diagonalizable variants)"};
  app.set_version_flag("--version", std::string("fastbss ") + kVersion);
  app.require_subcommand(1);

  SeparateOptions sep;
  auto* separate = app.add_subcommand("separate", "Separate a multichannel WAV into source images");
  std::string separate_config;
  separate->add_option("--config", separate_config, "key=value file; explicit flags take precedence");
  separate->add_option("input", sep.input, "Input multichannel WAV")->required();
  separate->add_option("--method", sep.method, "fca|mnmf|mnmf-dp|fast-fca|fast-mnmf|fast-mnmf-dp")
      ->capture_default_str();
  separate->add_option("--sources", sep.sources, "Number of sources N")->capture_default_str();
  separate->add_option("--bases", sep.bases, "NMF bases per source K")->capture_default_str();
  separate->add_option("--iters", sep.iters, "Iterations")->capture_default_str();
  separate->add_option("--seed", sep.seed, "Random seed")->capture_default_str();
  separate->add_option("--win", sep.win, "STFT window length")->capture_default_str();
  separate->add_option("--hop", sep.hop, "STFT hop")->capture_default_str();
  separate->add_option("--out", sep.out, "Output directory")->capture_default_str();
  separate->add_option("--threads", sep.threads, "Worker threads")->capture_default_str();
  separate->add_option("--decoder", sep.decoder, "Decoder weights for the deep-prior methods");

  BenchmarkOptions bench;
  auto* benchmark = app.add_subcommand("benchmark", "Time methods over an N x K grid on synthetic input");
  std::string benchmark_config;
  benchmark->add_option("--config", benchmark_config, "key=value file; explicit flags take precedence");
  benchmark->add_option("--methods", bench.methods, "Methods to time")->delimiter(',')->capture_default_str();
  benchmark->add_option("--sources", bench.sources, "Source counts")->delimiter(',')->capture_default_str();
  benchmark->add_option("--bases", bench.bases, "Basis counts")->delimiter(',')->capture_default_str();
  benchmark->add_option("--channels", bench.channels, "Microphones M")->capture_default_str();
  benchmark->add_option("--duration", bench.duration, "Input length in seconds")->capture_default_str();
  benchmark->add_option("--iters", bench.iters, "Timed iterations per cell")->capture_default_str();
  benchmark->add_option("--seed", bench.seed, "Random seed")->capture_default_str();
  benchmark->add_option("--win", bench.win, "STFT window length")->capture_default_str();
  benchmark->add_option("--hop", bench.hop, "STFT hop")->capture_default_str();
  benchmark->add_option("--threads", bench.threads, "Worker threads")->capture_default_str();
  benchmark->add_option("--out", bench.out, "CSV path (default stdout)");

  SynthOptions syn;
  auto* synth = app.add_subcommand("synth", "Write a synthetic convolutive mixture and its source images");
  std::string synth_config;
  synth->add_option("--config", synth_config, "key=value file; explicit flags take precedence");
  synth->add_option("--sources", syn.sources, "Number of sources")->capture_default_str();
  synth->add_option("--channels", syn.channels, "Microphones")->capture_default_str();
  synth->add_option("--duration", syn.duration, "Seconds")->capture_default_str();
  synth->add_option("--seed", syn.seed, "Random seed")->capture_default_str();
  synth->add_option("--rir-length", syn.rir_length, "Room response taps")->capture_default_str();
  synth->add_option("--out", syn.out, "Output directory")->capture_default_str();

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Score estimates against references (SI-SDR)");
  std::string eval_config;
  eval->add_option("--config", eval_config, "key=value file; explicit flags take precedence");
  eval->add_option("--estimates", ev.estimates, "Estimated image WAVs")->required()->expected(1, -1);
  eval->add_option("--references", ev.references, "Reference image WAVs")->required()->expected(1, -1);
  eval->add_option("--mixture", ev.mixture, "Mixture WAV (default: sum of references)");
  eval->add_option("--trace", ev.trace, "Trace CSV from separate, for timing columns");
  eval->add_option("--method", ev.method, "Method label for the report")->capture_default_str();
  eval->add_option("--channel", ev.channel, "Channel to score")->capture_default_str();
  eval->add_option("--out", ev.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
    for (const auto& [sub, path] : {std::pair{separate, separate_config}, std::pair{benchmark, benchmark_config},
                                    std::pair{synth, synth_config}, std::pair{eval, eval_config}})
      if (*sub && !path.empty()) apply_config(*sub, path);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    const bool missing_config = dynamic_cast<const CLI::FileError*>(&e) != nullptr;
    err << "error: " << e.what() << "\n";
    return missing_config ? kIo : kUsage;
  }

  try {
    if (*separate) return cmd_separate(sep, err);
    if (*benchmark) return cmd_benchmark(bench, out);
    if (*synth) return cmd_synth(syn, err);
    if (*eval) return cmd_eval(ev, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}

}  // namespace fastbss::cli
