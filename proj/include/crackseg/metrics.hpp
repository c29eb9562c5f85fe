#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "crackseg/data.hpp"
#include "crackseg/model.hpp"
#include "crackseg/ops.hpp"

namespace crackseg {

/// value >= threshold maps to 1. Inclusive boundary, so a 0.5 probability
/// counts as crack at the default threshold.
inline std::vector<uint8_t> binarize(const std::vector<float>& grid,
                                     float threshold = 0.5f) {
  std::vector<uint8_t> out(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) out[i] = grid[i] >= threshold ? 1 : 0;
  return out;
}

/// |intersection| / |union|; two empty masks agree perfectly and score 1.
inline double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size())
    throw ShapeError("iou: size mismatch " + std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()));
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] & gt[i];
    uni += pred[i] | gt[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// 2|intersection| / (|pred| + |gt|); both-empty scores 1.
inline double dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size())
    throw ShapeError("dice: size mismatch " + std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()));
  int64_t inter = 0, total = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] & gt[i];
    total += pred[i] + gt[i];
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

struct EvalRow {
  std::string id;
  double loss = 0.0;
  double iou = 0.0;
  double dice = 0.0;
};

struct EvalReport {
  double mean_loss = 0.0;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  float threshold = 0.5f;
  std::vector<EvalRow> rows;
};

/// Per sample: forward, BCE against the continuous mask, then binarize both
/// prediction and mask at the threshold for IoU/DICE. Macro averaging: each
/// sample contributes equally to the means.
inline EvalReport evaluate(const Model& model, const Dataset& ds,
                           float threshold = 0.5f) {
  if (ds.empty()) throw DataError("evaluate: empty dataset");
  EvalReport rep;
  rep.threshold = threshold;
  for (size_t i = 0; i < ds.size(); ++i) {
    auto [x, y] = make_batch(ds, {i});
    Tensor pred = model.forward(x);
    if (pred.shape() != y.shape())
      throw ShapeError("evaluate: model output " + shape_str(pred.shape()) +
                       " does not match mask " + shape_str(y.shape()));
    EvalRow row;
    row.id = ds.samples[i].id;
    row.loss = bce_loss(pred, y).scalar();
    const std::vector<uint8_t> pb = binarize(pred.data(), threshold);
    const std::vector<uint8_t> gb = binarize(y.data(), threshold);
    row.iou = iou(pb, gb);
    row.dice = dice(pb, gb);
    rep.mean_loss += row.loss;
    rep.mean_iou += row.iou;
    rep.mean_dice += row.dice;
    rep.rows.push_back(std::move(row));
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.mean_loss /= n;
  rep.mean_iou /= n;
  rep.mean_dice /= n;
  return rep;
}

inline void write_eval_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "id,loss,iou,dice\n";
  char line[160];
  for (const EvalRow& r : rep.rows) {
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f\n", r.id.c_str(), r.loss,
                  r.iou, r.dice);
    out << line;
  }
  if (!out) throw DataError("short write to " + path);
}

/// One-row comparison table in the Model | Test Loss | IoU | DICE Coeff
/// layout, with the overlap scores as percentages.
inline void print_eval_table(std::ostream& out, const std::string& model_name,
                             const EvalReport& rep) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s | %-9s | %-7s | %s\n", "Model",
                "Test Loss", "IoU", "DICE Coeff");
  out << line;
  std::snprintf(line, sizeof(line), "%-16s | %-9.4f | %6.2f%% | %6.2f%%\n",
                model_name.c_str(), rep.mean_loss, 100.0 * rep.mean_iou,
                100.0 * rep.mean_dice);
  out << line;
}

}  // namespace crackseg
