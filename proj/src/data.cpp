#include "mofelab/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mofelab/error.hpp"
#include "mofelab/kernels/kernels.hpp"
#include "mofelab/rng.hpp"

namespace mofelab {

// Shortest decimal form that parses back to the same bits.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

constexpr std::uint64_t kCentroidTag = 0x63656e74;
constexpr std::uint64_t kSplitTag[3] = {0x747261696e, 0x76616c, 0x74657374};

double parse_double(std::string_view tok, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    throw DataError("dataset: bad float '" + std::string(tok) + "' at line " +
                    std::to_string(line_no));
  }
  return v;
}

std::size_t parse_size(std::string_view tok, std::size_t line_no) {
  std::size_t v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    throw DataError("dataset: bad integer '" + std::string(tok) +
                    "' at line " + std::to_string(line_no));
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (modality_count < 2) throw ConfigError("synth: modality_count must be >= 2");
  if (class_count < 2) throw ConfigError("synth: class_count must be >= 2");
  if (dims.size() != modality_count) {
    throw ConfigError("synth: need one dim per modality");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("synth: dims must be positive");
  }
  if (sigma.size() != modality_count) {
    throw ConfigError("synth: need one sigma per modality");
  }
  for (double s : sigma) {
    if (!(s > 0.0)) throw ConfigError("synth: sigma must be positive");
  }
  if (!(centroid_scale > 0.0)) {
    throw ConfigError("synth: centroid_scale must be positive");
  }
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw ConfigError("synth: split sizes must be positive");
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("dataset: unknown split '" + name + "'");
}

std::vector<std::vector<std::vector<double>>> make_centroids(
    const SynthConfig& cfg) {
  Rng rng = make_rng(cfg.seed, kCentroidTag);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<std::vector<double>>> centroids(cfg.class_count);
  for (std::size_t c = 0; c < cfg.class_count; ++c) {
    centroids[c].resize(cfg.modality_count);
    for (std::size_t m = 0; m < cfg.modality_count; ++m) {
      centroids[c][m].resize(cfg.dims[m]);
      for (double& v : centroids[c][m]) {
        v = cfg.centroid_scale * normal(rng);
      }
    }
  }
  return centroids;
}

SynthBundle generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto centroids = make_centroids(cfg);

  auto make_split = [&](Split split, std::size_t n,
                        std::uint64_t tag) {
    Dataset d;
    d.split = split;
    d.modality_count = cfg.modality_count;
    d.class_count = cfg.class_count;
    d.dims = cfg.dims;
    d.provenance = cfg;
    Rng rng = make_rng(cfg.seed, tag);
    std::uniform_int_distribution<std::size_t> label_dist(0, cfg.class_count - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    d.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      MultimodalSample s;
      s.label = label_dist(rng);
      s.features.resize(cfg.modality_count);
      for (std::size_t m = 0; m < cfg.modality_count; ++m) {
        s.features[m].resize(cfg.dims[m]);
        for (std::size_t j = 0; j < cfg.dims[m]; ++j) {
          s.features[m][j] =
              centroids[s.label][m][j] + cfg.sigma[m] * normal(rng);
        }
      }
      d.samples.push_back(std::move(s));
    }
    return d;
  };

  SynthBundle b;
  b.train = make_split(Split::train, cfg.n_train, kSplitTag[0]);
  b.val = make_split(Split::val, cfg.n_val, kSplitTag[1]);
  b.test = make_split(Split::test, cfg.n_test, kSplitTag[2]);
  return b;
}

BayesOracle::BayesOracle(const SynthConfig& cfg)
    : cfg_(cfg), centroids_(make_centroids(cfg)) {
  cfg_.validate();
}

std::vector<double> BayesOracle::posterior(const MultimodalSample& sample,
                                           const ModalityMask& mask) const {
  validate_mask(mask, cfg_.modality_count);
  std::vector<double> loglik(cfg_.class_count, 0.0);
  for (std::size_t c = 0; c < cfg_.class_count; ++c) {
    for (std::size_t m = 0; m < cfg_.modality_count; ++m) {
      if (!mask.at(m)) continue;
      if (sample.features[m].size() != cfg_.dims[m]) {
        throw ShapeError("bayes: modality " + std::to_string(m) +
                         " dim mismatch");
      }
      const double d2 = kernels::sq_dist(sample.features[m].data(),
                                         centroids_[c][m].data(), cfg_.dims[m]);
      loglik[c] += -d2 / (2.0 * cfg_.sigma[m] * cfg_.sigma[m]);
    }
  }
  // Softmax over classes via log-sum-exp.
  double maxv = loglik[0];
  for (double v : loglik) maxv = std::max(maxv, v);
  double denom = 0.0;
  for (double v : loglik) denom += std::exp(v - maxv);
  std::vector<double> post(cfg_.class_count);
  for (std::size_t c = 0; c < cfg_.class_count; ++c) {
    post[c] = std::exp(loglik[c] - maxv) / denom;
  }
  return post;
}

std::vector<double> bayes_posterior(const SynthConfig& cfg,
                                    const MultimodalSample& sample,
                                    const ModalityMask& mask) {
  return BayesOracle(cfg).posterior(sample, mask);
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("dataset: cannot open " + path.string());
  out << "MMDS1\n";
  out << "M=" << data.modality_count << " C=" << data.class_count
      << " N=" << data.samples.size() << " dims=";
  for (std::size_t m = 0; m < data.dims.size(); ++m) {
    if (m) out << ',';
    out << data.dims[m];
  }
  out << " split=" << split_name(data.split) << "\n";
  for (const MultimodalSample& s : data.samples) {
    out << s.label << "\n";
    for (const std::vector<double>& feat : s.features) {
      for (std::size_t j = 0; j < feat.size(); ++j) {
        if (j) out << ' ';
        out << format_double(feat[j]);
      }
      out << "\n";
    }
  }
  if (!out) throw DataError("dataset: write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("dataset: cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;

  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw DataError("dataset: truncated file, expected " + std::string(what) +
                      " at line " + std::to_string(line_no + 1));
    }
    ++line_no;
  };

  next_line("magic");
  if (line != "MMDS1") {
    throw DataError("dataset: parse error at line 1: bad magic");
  }

  next_line("header");
  Dataset d;
  std::size_t n_declared = 0;
  bool saw_m = false, saw_c = false, saw_n = false, saw_dims = false,
       saw_split = false;
  for (std::string_view tok : split_ws(line)) {
    const std::size_t eq = tok.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("dataset: parse error at line 2: bad header token '" +
                      std::string(tok) + "'");
    }
    const std::string_view key = tok.substr(0, eq);
    const std::string_view val = tok.substr(eq + 1);
    if (key == "M") {
      d.modality_count = parse_size(val, 2);
      saw_m = true;
    } else if (key == "C") {
      d.class_count = parse_size(val, 2);
      saw_c = true;
    } else if (key == "N") {
      n_declared = parse_size(val, 2);
      saw_n = true;
    } else if (key == "dims") {
      std::size_t start = 0;
      while (start <= val.size()) {
        const std::size_t comma = val.find(',', start);
        const std::string_view piece =
            val.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                              : comma - start);
        d.dims.push_back(parse_size(piece, 2));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      saw_dims = true;
    } else if (key == "split") {
      d.split = parse_split(std::string(val));
      saw_split = true;
    } else {
      throw DataError("dataset: parse error at line 2: unknown header key '" +
                      std::string(key) + "'");
    }
  }
  if (!saw_m || !saw_c || !saw_n || !saw_dims || !saw_split) {
    throw DataError("dataset: parse error at line 2: incomplete header");
  }
  if (d.dims.size() != d.modality_count) {
    throw DataError("dataset: parse error at line 2: dims count != M");
  }

  d.samples.reserve(n_declared);
  for (std::size_t i = 0; i < n_declared; ++i) {
    next_line("label");
    MultimodalSample s;
    s.label = parse_size(line, line_no);
    if (s.label >= d.class_count) {
      throw DataError("dataset: label out of range at line " +
                      std::to_string(line_no));
    }
    s.features.resize(d.modality_count);
    for (std::size_t m = 0; m < d.modality_count; ++m) {
      next_line("features");
      const std::vector<std::string_view> toks = split_ws(line);
      if (toks.size() != d.dims[m]) {
        throw DataError("dataset: expected " + std::to_string(d.dims[m]) +
                        " values at line " + std::to_string(line_no) + ", got " +
                        std::to_string(toks.size()));
      }
      s.features[m].reserve(toks.size());
      for (std::string_view tok : toks) {
        s.features[m].push_back(parse_double(tok, line_no));
      }
    }
    d.samples.push_back(std::move(s));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty()) {
      throw DataError("dataset: trailing content at line " +
                      std::to_string(line_no));
    }
  }
  return d;
}

}  // namespace mofelab
