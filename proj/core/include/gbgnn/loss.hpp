#pragma once

#include "gbgnn/data.hpp"
#include "gbgnn/types.hpp"

namespace gbgnn {

inline constexpr double kDefaultClip = 1e-7;

double sigmoid(double score);

/// 1 iff (2p - 1)(2y - 1) < delta with p = sigmoid(score). Strict, so a
/// prediction exactly on the margin counts as correct.
int margin_loss(double score, int label, double delta);

/// Sigmoid cross-entropy in softplus form, with p and 1 - p clipped below at
/// `clip` (so the value never exceeds -log(clip)).
double sigmoid_ce(double score, int label, double clip = kDefaultClip);

/// Second derivative of sigmoid_ce in the score, p(1 - p).
double sigmoid_ce_curvature(double score);

/// Mean sigmoid cross-entropy over train nodes.
double surrogate_loss(const Vector& scores, const Labels& labels, const NodeIds& train,
                      double clip = kDefaultClip);

/// Gradient of the mean train cross-entropy: (p_n - y_n) / M on train nodes,
/// exactly zero elsewhere.
Vector surrogate_grad(const Vector& scores, const Labels& labels, const NodeIds& train);

struct ErrorSummary {
  double train_err = 0.0;  // R̂ on train nodes
  double test_err = 0.0;   // R on test nodes
  double surrogate = 0.0;  // L̂ on train nodes
};

/// Binary errors with margin delta.
ErrorSummary errors(const Vector& scores, const Labels& labels, const Split& split,
                    double delta, double clip = kDefaultClip);

/// Multiclass errors: 0-1 argmax error (lowest-index tie-break) and mean
/// softmax cross-entropy on train nodes.
ErrorSummary errors(const Matrix& scores, const Labels& labels, const Split& split,
                    double clip = kDefaultClip);

/// Lowest index among the row maxima.
int argmax_row(const Matrix& scores, Index row);
Labels argmax_rows(const Matrix& scores);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& scores);

/// Mean 0-1 error of predicted class ids on the given nodes.
double zero_one_error(const Labels& predicted, const Labels& labels, const NodeIds& ids);

/// Mean softmax cross-entropy of `scores` over `ids`, probabilities clipped.
double softmax_ce(const Matrix& scores, const Labels& labels, const NodeIds& ids,
                  double clip = kDefaultClip);

}  // namespace gbgnn
