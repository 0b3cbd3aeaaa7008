#include "gmgan/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "gmgan/error.hpp"
#include "gmgan/gmm.hpp"
#include "gmgan/trainer.hpp"

namespace gmgan {

ScoreMode parse_score_mode(const std::string& text) {
  if (text == "latent") return ScoreMode::latent;
  if (text == "energy") return ScoreMode::energy;
  throw InvalidConfigError("unknown scoring mode '" + text + "' (expected latent or energy)");
}

Aggregator parse_aggregator(const std::string& text) {
  if (text == "max") return Aggregator::max;
  if (text == "mean") return Aggregator::mean;
  throw InvalidConfigError("unknown aggregator '" + text + "' (expected max or mean)");
}

const char* score_mode_name(ScoreMode mode) { return mode == ScoreMode::latent ? "latent" : "energy"; }
const char* aggregator_name(Aggregator agg) { return agg == Aggregator::max ? "max" : "mean"; }

std::vector<double> score_matrix(const Model& model, const Eigen::MatrixXd& x, ScoreMode mode) {
  const auto& p = model.params;
  if (static_cast<std::size_t>(x.cols()) != p.arch.input_dim) {
    throw ShapeError("score: patches have " + std::to_string(x.cols()) + " values, model expects " +
                     std::to_string(p.arch.input_dim));
  }
  if (mode == ScoreMode::energy && !model.gmm) {
    throw InvalidInputError("energy scoring needs a checkpoint with a fitted mixture");
  }
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index begin = 0; begin < x.rows(); begin += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.rows() - begin);
    const Tensor xb = to_tensor(x.middleRows(begin, len));
    const Tensor z = encode(p, xb);
    if (mode == ScoreMode::latent) {
      const Tensor d = row_l2_distance(z, encode_aux(p, decode(p, z)));
      out.insert(out.end(), d.values().begin(), d.values().end());
    } else {
      const Eigen::VectorXd e = energies(to_matrix(z), *model.gmm);
      out.insert(out.end(), e.data(), e.data() + e.size());
    }
  }
  for (double s : out) {
    if (!std::isfinite(s)) throw NumericError("score is not finite");
  }
  return out;
}

double anomaly_score(const Model& model, std::span<const double> raw_patch, ScoreMode mode) {
  if (raw_patch.size() != model.patch_rows * model.patch_cols) {
    throw ShapeError("anomaly_score: patch has " + std::to_string(raw_patch.size()) + " values, model expects " +
                     std::to_string(model.patch_rows * model.patch_cols));
  }
  std::vector<double> buf(raw_patch.begin(), raw_patch.end());
  normalize_patch(buf, model.patch_cols, model.norm);
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::Matrix<double, 1, Eigen::Dynamic>>(
      buf.data(), static_cast<Eigen::Index>(buf.size()));
  return score_matrix(model, x, mode).front();
}

std::vector<double> score_patches(const Model& model, const PatchSet& patches, ScoreMode mode) {
  if (patches.rows != model.patch_rows || patches.cols != model.patch_cols) {
    throw ShapeError("patch shape " + std::to_string(patches.rows) + "x" + std::to_string(patches.cols) +
                     " does not match the model's " + std::to_string(model.patch_rows) + "x" +
                     std::to_string(model.patch_cols));
  }
  return score_matrix(model, normalized_matrix(patches, model.norm), mode);
}

double aggregate(std::span<const double> s, Aggregator agg) {
  if (s.empty()) throw InvalidInputError("cannot aggregate an empty clip");
  if (agg == Aggregator::max) return *std::max_element(s.begin(), s.end());
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

std::vector<ScoredSample> score_per_patch(const Model& model, const PatchSet& patches, ScoreMode mode) {
  const auto scores = score_patches(model, patches, mode);
  std::vector<ScoredSample> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = {patches.source_ids[i], scores[i], patches.labels[i]};
  return out;
}

std::vector<ScoredSample> score_per_clip(const Model& model, const PatchSet& patches, ScoreMode mode,
                                         Aggregator agg) {
  const auto scores = score_patches(model, patches, mode);
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(patches.source_ids[i]);
    if (inserted) order.push_back(patches.source_ids[i]);
    it->second.push_back(i);
  }
  std::vector<ScoredSample> out;
  for (const auto& id : order) {
    const auto& members = groups[id];
    std::vector<double> s;
    bool any_anom = false, all_normal = true;
    for (auto i : members) {
      s.push_back(scores[i]);
      any_anom = any_anom || patches.labels[i] == Label::anomalous;
      all_normal = all_normal && patches.labels[i] == Label::normal;
    }
    const Label label = any_anom ? Label::anomalous : (all_normal ? Label::normal : Label::unknown);
    out.push_back({id, aggregate(s, agg), label});
  }
  return out;
}

namespace {

struct Counts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

Counts count_labels(std::span<const ScoredSample> samples) {
  Counts c;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw InvalidInputError("score for '" + s.source_id + "' is not finite");
    if (s.label == Label::anomalous) ++c.pos;
    if (s.label == Label::normal) ++c.neg;
  }
  if (c.pos == 0 || c.neg == 0) {
    throw InvalidInputError("AUC needs both normal and anomalous samples (got " + std::to_string(c.neg) +
                            " normal, " + std::to_string(c.pos) + " anomalous)");
  }
  return c;
}

std::vector<ScoredSample> labelled_sorted(std::span<const ScoredSample> samples, bool descending) {
  std::vector<ScoredSample> v;
  for (const auto& s : samples) {
    if (s.label != Label::unknown) v.push_back(s);
  }
  std::stable_sort(v.begin(), v.end(), [descending](const ScoredSample& a, const ScoredSample& b) {
    return descending ? a.score > b.score : a.score < b.score;
  });
  return v;
}

}  // namespace

double auc_rank(std::span<const ScoredSample> samples) {
  const Counts c = count_labels(samples);
  const auto v = labelled_sorted(samples, false);
  // Ranks are 1-based; a tie group spanning ranks [i+1, j] gets their mean.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (v[k].label == Label::anomalous) rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(c.pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(c.neg));
}

RocResult roc_curve(std::span<const ScoredSample> samples) {
  const Counts c = count_labels(samples);
  const auto v = labelled_sorted(samples, true);
  RocResult r;
  r.roc.push_back({0.0, 0.0});
  const double np = static_cast<double>(c.pos), nn = static_cast<double>(c.neg);
  std::size_t tp = 0, fp = 0;
  // Twice the area in units of one (anomalous, normal) pair.
  double doubled_pairs = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    const std::size_t tp0 = tp, fp0 = fp;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].label == Label::anomalous ? tp : fp) += 1;
      ++j;
    }
    doubled_pairs += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0);
    r.roc.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
    i = j;
  }
  r.auc = doubled_pairs / (2.0 * np * nn);
  return r;
}

RocResult auc(std::span<const ScoredSample> samples) {
  RocResult r = roc_curve(samples);
  const double rank = auc_rank(samples);
  if (std::abs(rank - r.auc) > 1e-12) {
    throw NumericError("AUC mismatch between rank statistic and ROC sweep");
  }
  r.auc = rank;
  return r;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_scores_csv(std::span<const ScoredSample> samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << "source_id,score,label\n";
  for (const auto& s : samples) {
    out << csv_field(s.source_id) << ',' << fmt_double(s.score) << ',' << label_name(s.label) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ScoredSample> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "source_id,score,label") {
    throw FormatError(path.string() + ": missing scores header");
  }
  std::vector<ScoredSample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw FormatError(path.string() + ": expected 3 fields in '" + line + "'");
    double score = 0.0;
    const auto [end, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), score);
    if (ec != std::errc() || end != f[1].data() + f[1].size()) {
      throw FormatError(path.string() + ": bad score '" + f[1] + "'");
    }
    out.push_back({f[0], score, parse_label(f[2])});
  }
  return out;
}

void export_latents(const Model& model, const PatchSet& patches, const std::filesystem::path& path) {
  if (patches.rows != model.patch_rows || patches.cols != model.patch_cols) {
    throw ShapeError("export_latents: patch shape does not match the model");
  }
  const Eigen::MatrixXd x = normalized_matrix(patches, model.norm);
  const Eigen::MatrixXd z = encode_all(model.params, x);
  const auto scores = score_matrix(model, x, ScoreMode::latent);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << "source_id,label";
  for (Eigen::Index j = 0; j < z.cols(); ++j) out << ",z_" << (j + 1);
  out << ",score\n";
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    out << csv_field(patches.source_ids[ui]) << ',' << label_name(patches.labels[ui]);
    for (Eigen::Index j = 0; j < z.cols(); ++j) out << ',' << fmt_double(z(i, j));
    out << ',' << fmt_double(scores[ui]) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace gmgan
