#include "rtify/dataset.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "rtify/error.hpp"
#include "rtify/hash.hpp"
#include "rtify/parallel.hpp"
#include "rtify/rng.hpp"

namespace rtify::stimuli {

namespace {

constexpr int kRecordHeader = 3;

struct SplitPlan {
  std::string name;
  std::uint64_t id;
  int per_condition;
  std::vector<double> coherences;
  bool sweep;
};

std::vector<SplitPlan> plan(const DatasetSpec& spec) {
  std::vector<SplitPlan> out;
  out.push_back({"train", 0, spec.train_per_condition, spec.coherences, true});
  if (spec.test_per_condition > 0) out.push_back({"test", 1, spec.test_per_condition, spec.coherences, true});
  if (spec.warmup_trials > 0) out.push_back({"warmup", 2, spec.warmup_trials, {spec.warmup_coherence}, false});
  return out;
}

}  // namespace

void DatasetSpec::validate() const {
  if (coherences.empty()) throw ConfigError("dataset: at least one coherence is required");
  for (double c : coherences)
    if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("dataset: coherence outside [0,1]");
  if (directions_deg.size() < 2) throw ConfigError("dataset: at least two directions are required");
  if (train_per_condition < 1) throw ConfigError("dataset: train_per_condition must be >= 1");
  if (test_per_condition < 0 || warmup_trials < 0) throw ConfigError("dataset: trial counts must be >= 0");
  if (base.n_frames < 2) throw ConfigError("dataset: n_frames must be >= 2");
  base.validate();
}

std::vector<int> counterbalanced_labels(int n, int n_classes, std::uint64_t seed) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[i] = i % n_classes;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(labels[i], labels[pick(rng)]);
  }
  return labels;
}

Dataset make_dataset(const DatasetSpec& spec, int workers) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const int n_classes = static_cast<int>(spec.directions_deg.size());
  for (const auto& p : plan(spec)) {
    Split split;
    split.name = p.name;
    const auto labels =
        counterbalanced_labels(p.per_condition, n_classes, derive_seed(spec.seed, {tag(Stream::kStimulusLabel), p.id}));
    const std::size_t n_cond = p.coherences.size();
    split.trials.resize(n_cond * p.per_condition);
    parallel_for(split.trials.size(), workers, [&](std::size_t idx) {
      const int cond = static_cast<int>(idx / p.per_condition);
      const int i = static_cast<int>(idx % p.per_condition);
      RdmConfig cfg = spec.base;
      cfg.coherence = p.coherences[cond];
      cfg.direction_deg = spec.directions_deg[labels[i]];
      cfg.seed = derive_seed(spec.seed, {tag(Stream::kStimulusTrial), p.id, static_cast<std::uint64_t>(i)});
      Trial& t = split.trials[idx];
      t.label = labels[i];
      t.condition = p.sweep ? cond : -1;
      t.coherence = cfg.coherence;
      t.stream = motion_energy(generate_rdm(cfg));
    });
    ds.splits.push_back(std::move(split));
  }
  return ds;
}

const Split& Dataset::split(const std::string& name) const {
  for (const auto& s : splits)
    if (s.name == name) return s;
  throw ConfigError("dataset has no split '" + name + "'");
}

bool Dataset::has_split(const std::string& name) const {
  return std::any_of(splits.begin(), splits.end(), [&](const Split& s) { return s.name == name; });
}

std::size_t Dataset::n_records() const {
  std::size_t n = 0;
  for (const auto& s : splits) n += s.trials.size();
  return n;
}

nlohmann::json Dataset::manifest() const {
  nlohmann::json m;
  m["format"] = "rtify-dataset";
  m["format_version"] = 1;
  m["tool_version"] = kToolVersion;
  m["config_hash"] = config_hash;
  m["seed"] = spec.seed;
  m["channels"] = kChannels;
  m["record_layout"] = {"label", "coherence", "condition", "stream[n_frames x channels]"};
  m["directions_deg"] = spec.directions_deg;
  m["stimulus"] = {{"n_dots", spec.base.n_dots},
                   {"n_frames", spec.base.n_frames},
                   {"frame_rate_hz", spec.base.frame_rate_hz},
                   {"field_size", spec.base.field_size},
                   {"dot_step", spec.base.dot_step}};
  auto conditions = nlohmann::json::array();
  for (std::size_t c = 0; c < spec.coherences.size(); ++c) {
    conditions.push_back({{"condition_id", c}, {"coherence", spec.coherences[c]}});
  }
  m["conditions"] = conditions;
  m["trials_per_condition"] = {{"train", spec.train_per_condition}, {"test", spec.test_per_condition}};
  m["warmup"] = {{"trials", spec.warmup_trials}, {"coherence", spec.warmup_coherence}};
  auto sp = nlohmann::json::array();
  for (const auto& s : splits) sp.push_back({{"name", s.name}, {"file", s.name + ".f32"}, {"records", s.trials.size()}});
  m["splits"] = sp;
  return m;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  static_assert(std::endian::native == std::endian::little);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory: " + dir.string() + " (" + ec.message() + ")");
  const auto frames = dataset.spec.base.n_frames;
  for (const auto& s : dataset.splits) {
    const auto path = dir / (s.name + ".f32");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    std::vector<float> rec(kRecordHeader + static_cast<std::size_t>(frames) * kChannels);
    for (const auto& t : s.trials) {
      rec[0] = static_cast<float>(t.label);
      rec[1] = static_cast<float>(t.coherence);
      rec[2] = static_cast<float>(t.condition);
      std::copy(t.stream.channels.begin(), t.stream.channels.end(), rec.begin() + kRecordHeader);
      out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing: " + path.string());
  }
  const auto mpath = dir / "manifest.json";
  std::ofstream mout(mpath, std::ios::trunc);
  if (!mout) throw IoError("cannot open for writing: " + mpath.string());
  mout << dataset.manifest().dump(2) << '\n';
  if (!mout) throw IoError("failed writing: " + mpath.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream min(mpath);
  if (!min) throw IoError("cannot open dataset manifest: " + mpath.string());
  nlohmann::json m;
  try {
    min >> m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  Dataset ds;
  ds.config_hash = m.at("config_hash").get<std::string>();
  auto& spec = ds.spec;
  spec.seed = m.at("seed").get<std::uint64_t>();
  spec.directions_deg = m.at("directions_deg").get<std::vector<double>>();
  const auto& st = m.at("stimulus");
  spec.base.n_dots = st.at("n_dots").get<int>();
  spec.base.n_frames = st.at("n_frames").get<int>();
  spec.base.frame_rate_hz = st.at("frame_rate_hz").get<double>();
  spec.base.field_size = st.at("field_size").get<double>();
  spec.base.dot_step = st.at("dot_step").get<double>();
  spec.coherences.clear();
  for (const auto& c : m.at("conditions")) spec.coherences.push_back(c.at("coherence").get<double>());
  spec.train_per_condition = m.at("trials_per_condition").at("train").get<int>();
  spec.test_per_condition = m.at("trials_per_condition").at("test").get<int>();
  spec.warmup_trials = m.at("warmup").at("trials").get<int>();
  spec.warmup_coherence = m.at("warmup").at("coherence").get<double>();

  const int frames = spec.base.n_frames;
  const std::size_t rec_size = kRecordHeader + static_cast<std::size_t>(frames) * kChannels;
  for (const auto& sj : m.at("splits")) {
    Split s;
    s.name = sj.at("name").get<std::string>();
    const auto n = sj.at("records").get<std::size_t>();
    const auto path = dir / sj.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset split: " + path.string());
    std::vector<float> rec(rec_size);
    s.trials.resize(n);
    for (auto& t : s.trials) {
      in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(float)));
      if (!in) throw IoError("truncated dataset split: " + path.string());
      t.label = static_cast<int>(rec[0]);
      t.condition = static_cast<int>(rec[2]);
      t.coherence = t.condition >= 0 && t.condition < static_cast<int>(spec.coherences.size())
                        ? spec.coherences[t.condition]
                        : spec.warmup_coherence;
      t.stream.n_frames = frames;
      t.stream.channels.assign(rec.begin() + kRecordHeader, rec.end());
    }
    ds.splits.push_back(std::move(s));
  }
  return ds;
}

}  // namespace rtify::stimuli
