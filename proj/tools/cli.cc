#include "cli.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mopt/fusion.h"
#include "mopt/io.h"
#include "mopt/metrics.h"
#include "mopt/oracle.h"
#include "mopt/synth.h"
#include "mopt/tracker.h"

namespace mopt::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string FrameName(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu%s", i, ext);
  return buf;
}

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

unsigned ThreadsFromEnv() {
  const char* env = std::getenv("MOPT_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (*end != '\0') throw UsageError("MOPT_THREADS must be a non-negative integer");
  return static_cast<unsigned>(v);
}

std::vector<std::string> SplitOn(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) parts.push_back(part);
  return parts;
}

long long ToInt(const std::string& s, const std::string& spec) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("bad number \"" + s + "\" in corruption \"" + spec + "\"");
}

// switch:F:TRACK:LABEL  dropout:F:TRACK  spurious:F:CLASS:X0,Y0,X1,Y1
// erode:TRACK:FRACTION
void ParseCorruption(const std::string& spec, CorruptionSpec& out) {
  const std::vector<std::string> p = SplitOn(spec, ':');
  const std::string kind = p.empty() ? "" : p[0];
  if (kind == "switch" && p.size() == 4) {
    out.id_switches.push_back({ToInt(p[1], spec),
                               static_cast<TrackId>(ToInt(p[2], spec)),
                               static_cast<TrackId>(ToInt(p[3], spec))});
  } else if (kind == "dropout" && p.size() == 3) {
    out.dropouts.push_back(
        {ToInt(p[1], spec), static_cast<TrackId>(ToInt(p[2], spec))});
  } else if (kind == "spurious" && p.size() == 4) {
    const std::vector<std::string> b = SplitOn(p[3], ',');
    if (b.size() != 4) throw UsageError("spurious box needs x0,y0,x1,y1: " + spec);
    out.spurious.push_back(
        {ToInt(p[1], spec), static_cast<ClassId>(ToInt(p[2], spec)),
         Box{static_cast<std::int32_t>(ToInt(b[0], spec)),
             static_cast<std::int32_t>(ToInt(b[1], spec)),
             static_cast<std::int32_t>(ToInt(b[2], spec)),
             static_cast<std::int32_t>(ToInt(b[3], spec))}});
  } else if (kind == "erode" && p.size() == 3) {
    double e = 0.0;
    try {
      e = std::stod(p[2]);
    } catch (const std::exception&) {
      throw UsageError("bad fraction in corruption \"" + spec + "\"");
    }
    out.erosions.push_back({static_cast<TrackId>(ToInt(p[1], spec)), e});
  } else {
    throw UsageError("unrecognized corruption \"" + spec + "\"");
  }
}

nlohmann::json LedgerToJson(const std::map<ClassId, ClassStats>& ledger) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [c, s] : ledger) {
    classes.push_back({{"class_id", c},
                       {"TP", s.tp},
                       {"FP", s.fp},
                       {"FN", s.fn},
                       {"IDS", s.ids},
                       {"gt_segments", s.gt_segments},
                       {"IoU_sum", s.iou_sum},
                       {"sIDS", s.sids_sum}});
  }
  return {{"classes", classes}};
}

void WriteJson(const fs::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  io::WriteBytes(path, std::span<const std::uint8_t>(
                           reinterpret_cast<const std::uint8_t*>(text.data()),
                           text.size()));
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string manifest;
  std::string out;
  int threads = -1;
};

int RunEval(const EvalArgs& a, std::ostream& out) {
  const io::SequenceManifest manifest = io::ReadManifest(a.manifest);
  const ClassTaxonomy taxonomy = io::ReadTaxonomy(manifest.taxonomy);
  std::vector<FrameLabeling> pred;
  std::vector<FrameLabeling> gt;
  for (std::size_t i = 0; i < manifest.gt.size(); ++i) {
    const auto f = static_cast<FrameIndex>(i);
    pred.push_back(io::LoadFrame(manifest.pred[i], manifest, taxonomy, f));
    gt.push_back(io::LoadFrame(manifest.gt[i], manifest, taxonomy, f));
  }
  EvalOptions options;
  options.threads =
      a.threads >= 0 ? static_cast<unsigned>(a.threads) : ThreadsFromEnv();
  const MetricReport report = EvaluateSequence(pred, gt, taxonomy, options);
  if (a.out.empty()) {
    out << io::ReportToJson(report);
  } else {
    io::WriteReport(report, a.out);
    out << "frames " << report.frames << "  sPTQ " << Fixed(report.sptq)
        << "  PTQ " << Fixed(report.ptq) << "  PQ " << Fixed(report.pq)
        << "  sMOTSA " << Fixed(report.smotsa) << "\n";
  }
  return kExitOk;
}

// ---- fuse -----------------------------------------------------------------

struct FuseArgs {
  std::string taxonomy;
  std::vector<std::string> logits;
  std::vector<std::string> candidates;
  std::string out_dir;
  double u_p = 0.5;
  std::optional<std::uint64_t> u_a;
  std::string profile = "image";
};

int RunFuse(const FuseArgs& a, std::ostream& out) {
  if (a.logits.size() != a.candidates.size()) {
    throw UsageError("--logits and --candidates need one file each per frame");
  }
  const ClassTaxonomy taxonomy = io::ReadTaxonomy(a.taxonomy);
  FusionConfig config = a.profile == "points" ? FusionConfig::PointProfile()
                                              : FusionConfig::ImageProfile();
  config.min_score = a.u_p;
  if (a.u_a) config.min_stuff_area = *a.u_a;

  std::vector<std::vector<InstanceCandidate>> frames;
  TrackId next_id = 1;
  for (const std::string& path : a.candidates) {
    frames.push_back(io::ReadCandidates(path));
    for (const InstanceCandidate& c : frames.back()) {
      next_id = std::max(next_id, c.track_id + 1);
    }
  }
  fs::create_directories(a.out_dir);
  std::size_t fresh = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    FrameIndex frame_index = 0;
    const SemanticLogits semantic =
        io::ReadSemanticLogits(a.logits[i], &frame_index);
    for (InstanceCandidate& c : frames[i]) {
      if (c.score > config.min_score && c.track_id == kNoTrack) {
        c.track_id = next_id++;
        ++fresh;
      }
    }
    const FrameLabeling frame =
        FuseFrame(frames[i], semantic, taxonomy, config, frame_index);
    io::WriteCanonical(frame, fs::path(a.out_dir) / FrameName(i, ".mopt"));
  }
  out << "fused " << frames.size() << " frames into " << a.out_dir;
  if (fresh > 0) out << " (" << fresh << " untracked candidates given new ids)";
  out << "\n";
  return kExitOk;
}

// ---- track ----------------------------------------------------------------

struct TrackArgs {
  std::vector<std::string> candidates;
  std::string out_dir;
  double u_s = 0.5;
  std::int64_t n_t = 3;
  double alpha = 0.2;
  std::optional<double> max_distance;
};

int RunTrack(const TrackArgs& a, std::ostream& out) {
  TrackerConfig config;
  config.min_score = a.u_s;
  config.window = a.n_t;
  config.margin = a.alpha;
  config.max_distance = a.max_distance;

  fs::create_directories(a.out_dir);
  TrackerState state;
  std::vector<EmbeddingSample> labelled;
  std::size_t fresh = 0;
  for (const std::string& path : a.candidates) {
    FrameIndex frame_index = 0;
    std::vector<InstanceCandidate> cands = io::ReadCandidates(path, &frame_index);
    for (InstanceCandidate& c : cands) {
      if (c.track_id != kNoTrack && c.score > config.min_score) {
        labelled.push_back({c.embedding, c.class_id, c.track_id});
      }
      c.track_id = kNoTrack;
    }
    fresh += AssociateFrame(state, cands, frame_index, config);
    io::WriteCandidates(fs::path(a.out_dir) / fs::path(path).filename(), cands,
                        frame_index);
  }
  out << "tracked " << a.candidates.size() << " frames, " << fresh
      << " tracks started";
  if (!labelled.empty()) {
    out << ", triplet loss " << Fixed(BatchHardTripletLoss(labelled, config.margin));
  }
  out << "\n";
  return kExitOk;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  SynthConfig config;
  std::vector<std::string> corruptions;
  std::string out_dir;
};

int RunSynth(const SynthArgs& a, std::ostream& out) {
  CorruptionSpec spec;
  for (const std::string& c : a.corruptions) ParseCorruption(c, spec);
  const SynthSequence seq = GenerateSequence(a.config);
  const CorruptedSequence corrupted = ApplyCorruptions(seq, spec);

  const fs::path root(a.out_dir);
  for (const char* sub : {"gt", "pred", "logits", "candidates"}) {
    fs::create_directories(root / sub);
  }
  io::SequenceManifest manifest;
  manifest.dataset = "synthetic seed " + std::to_string(a.config.seed);
  manifest.format = io::FrameFormat::kCanonical;
  manifest.taxonomy = root / "taxonomy.json";
  io::WriteTaxonomy(seq.taxonomy, manifest.taxonomy);
  for (std::size_t i = 0; i < seq.gt.size(); ++i) {
    const auto f = static_cast<FrameIndex>(i);
    const fs::path gt = root / "gt" / FrameName(i, ".mopt");
    const fs::path pred = root / "pred" / FrameName(i, ".mopt");
    io::WriteCanonical(seq.gt[i], gt);
    io::WriteCanonical(corrupted.pred[i], pred);
    io::WriteSemanticLogits(root / "logits" / FrameName(i, ".mtc"),
                            seq.semantic[i], f);
    io::WriteCandidates(root / "candidates" / FrameName(i, ".mtc"),
                        seq.candidates[i], f);
    manifest.gt.push_back({gt, {}});
    manifest.pred.push_back({pred, {}});
  }
  io::WriteManifest(manifest, root / "manifest.json");
  WriteJson(root / "ledger.json", LedgerToJson(corrupted.ledger));
  out << "wrote " << seq.gt.size() << " frames with " << seq.objects.size()
      << " objects to " << a.out_dir << "\n";
  return kExitOk;
}

// ---- render ---------------------------------------------------------------

struct RenderArgs {
  std::string taxonomy;
  std::vector<std::string> frames;
  std::string out_dir;
  std::uint64_t seed = 0;
};

int RunRender(const RenderArgs& a, std::ostream& out) {
  const ClassTaxonomy taxonomy = io::ReadTaxonomy(a.taxonomy);
  fs::create_directories(a.out_dir);
  for (const std::string& path : a.frames) {
    const FrameLabeling frame = io::ReadCanonical(path);
    io::WritePpm(io::RenderOverlay(frame, taxonomy, a.seed),
                 fs::path(a.out_dir) / fs::path(path).filename().replace_extension(".ppm"));
  }
  out << "rendered " << a.frames.size() << " frames\n";
  return kExitOk;
}

// ---- selftest -------------------------------------------------------------

struct SelftestArgs {
  std::uint64_t seed = 1;
  int cases = 25;
};

int RunSelftest(const SelftestArgs& a, std::ostream& out) {
  SplitMix64 rng(a.seed);
  int failures = 0;
  auto report = [&](const std::string& name, int failed, int total) {
    out << (failed == 0 ? "ok   " : "FAIL ") << name << " (" << total - failed
        << "/" << total << ")\n";
    failures += failed;
  };

  int bad = 0;
  int unique_bad = 0;
  int frames = 0;
  for (int i = 0; i < a.cases; ++i) {
    const oracle::RandomCase rc = oracle::MakeRandomCase(rng, 16, 4, 4);
    const MetricReport fast = EvaluateSequence(rc.pred, rc.gt, rc.taxonomy);
    const MetricReport naive = oracle::NaiveEvaluate(rc.pred, rc.gt, rc.taxonomy);
    if (!oracle::CompareReports(fast, naive, 1e-12).empty()) ++bad;
    for (std::size_t f = 0; f < rc.gt.size(); ++f, ++frames) {
      if (!oracle::CheckUniqueMatching(rc.pred[f], rc.gt[f], 0)) ++unique_bad;
    }
  }
  report("evaluation matches the naive oracle", bad, a.cases);
  report("unique matching", unique_bad, frames);

  bad = 0;
  for (int i = 0; i < a.cases; ++i) {
    const auto r = static_cast<std::size_t>(rng.UniformInt(1, 6));
    const auto c = static_cast<std::size_t>(rng.UniformInt(1, 6));
    CostMatrix m(r, c);
    for (std::size_t k = 0; k < r * c; ++k) {
      m.cost[k] = rng.Uniform01() * 10.0;
      if (rng.Uniform01() < 0.25) m.allowed[k] = 0;
    }
    const Assignment fast = HungarianAssign(m);
    const oracle::ExhaustiveResult slow = oracle::ExhaustiveAssignment(m);
    if (fast.assigned != slow.assigned ||
        std::fabs(fast.total_cost - slow.total_cost) > 1e-9) {
      ++bad;
    }
  }
  report("assignment matches exhaustive search", bad, a.cases);

  bad = 0;
  for (int i = 0; i < a.cases; ++i) {
    std::vector<EmbeddingSample> samples(
        static_cast<std::size_t>(rng.UniformInt(1, 12)));
    for (EmbeddingSample& s : samples) {
      s.class_id = static_cast<ClassId>(rng.UniformInt(1, 2));
      s.track_id = static_cast<TrackId>(rng.UniformInt(1, 3));
      s.embedding.resize(4);
      for (float& v : s.embedding) v = static_cast<float>(rng.Uniform01());
    }
    if (std::fabs(BatchHardTripletLoss(samples, 0.2) -
                  oracle::NaiveTripletLoss(samples, 0.2)) > 1e-9) {
      ++bad;
    }
  }
  report("triplet loss matches the all-pairs oracle", bad, a.cases);

  out << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return failures == 0 ? kExitOk : kExitInvariant;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"mopt: panoptic tracking metrics, fusion and association"};
  app.name("mopt");
  app.require_subcommand(1);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a sequence manifest");
  eval->add_option("--manifest", eval_args.manifest, "Sequence manifest json")
      ->required();
  eval->add_option("--out", eval_args.out, "Report path (stdout if omitted)");
  eval->add_option("--threads", eval_args.threads,
                   "Match-phase workers, 0 = auto (default: MOPT_THREADS)");

  FuseArgs fuse_args;
  auto* fuse = app.add_subcommand("fuse", "Fuse logits and candidates into frames");
  fuse->add_option("--taxonomy", fuse_args.taxonomy)->required();
  fuse->add_option("--logits", fuse_args.logits, "One logits file per frame")
      ->required();
  fuse->add_option("--candidates", fuse_args.candidates,
                   "One candidates file per frame")
      ->required();
  fuse->add_option("--out-dir", fuse_args.out_dir)->required();
  fuse->add_option("--u-p", fuse_args.u_p, "Candidate score threshold")
      ->capture_default_str();
  fuse->add_option("--u-a", fuse_args.u_a,
                   "Minimum stuff area (default 375 image, 32 points)");
  fuse->add_option("--profile", fuse_args.profile)
      ->check(CLI::IsMember({"image", "points"}))
      ->capture_default_str();

  TrackArgs track_args;
  auto* track = app.add_subcommand("track", "Assign track ids to candidates");
  track->add_option("--candidates", track_args.candidates,
                    "Candidate files in frame order")
      ->required();
  track->add_option("--out-dir", track_args.out_dir)->required();
  track->add_option("--u-s", track_args.u_s, "Association score threshold")
      ->capture_default_str();
  track->add_option("--n-t", track_args.n_t, "Frames a track stays associable")
      ->capture_default_str();
  track->add_option("--alpha", track_args.alpha, "Triplet loss margin")
      ->capture_default_str();
  track->add_option("--max-distance", track_args.max_distance);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic sequence");
  synth->add_option("--seed", synth_args.config.seed)->capture_default_str();
  synth->add_option("--frames", synth_args.config.frames)->capture_default_str();
  synth->add_option("--objects", synth_args.config.objects)->capture_default_str();
  synth->add_option("--width", synth_args.config.width)->capture_default_str();
  synth->add_option("--height", synth_args.config.height)->capture_default_str();
  synth->add_option("--noise", synth_args.config.embedding_noise,
                    "Embedding noise amplitude")
      ->capture_default_str();
  synth->add_option("--corrupt", synth_args.corruptions,
                    "switch:F:TRACK:LABEL | dropout:F:TRACK | "
                    "spurious:F:CLASS:X0,Y0,X1,Y1 | erode:TRACK:FRACTION");
  synth->add_option("--out-dir", synth_args.out_dir)->required();

  RenderArgs render_args;
  auto* render = app.add_subcommand("render", "Render canonical frames as PPM");
  render->add_option("--taxonomy", render_args.taxonomy)->required();
  render->add_option("--frames", render_args.frames)->required();
  render->add_option("--out-dir", render_args.out_dir)->required();
  render->add_option("--seed", render_args.seed, "Palette seed")
      ->capture_default_str();

  SelftestArgs selftest_args;
  auto* selftest =
      app.add_subcommand("selftest", "Check fast paths against the oracles");
  selftest->add_option("--seed", selftest_args.seed)->capture_default_str();
  selftest->add_option("--cases", selftest_args.cases)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
  if (!args.empty() && !args.front().empty() && args.front()[0] != '-' &&
      std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) {
        return s->get_name() == args.front();
      })) {
    err << "mopt: unknown subcommand \"" << args.front() << "\"\n\n" << app.help();
    return kExitUsage;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "mopt: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (eval->parsed()) return RunEval(eval_args, out);
    if (fuse->parsed()) return RunFuse(fuse_args, out);
    if (track->parsed()) return RunTrack(track_args, out);
    if (synth->parsed()) return RunSynth(synth_args, out);
    if (render->parsed()) return RunRender(render_args, out);
    if (selftest->parsed()) return RunSelftest(selftest_args, out);
  } catch (const UsageError& e) {
    err << "mopt: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvariantError& e) {
    err << "mopt: internal invariant failed: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const InvalidInput& e) {
    err << "mopt: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "mopt: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "mopt: internal error: " << e.what() << "\n";
    return kExitInvariant;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace mopt::cli
