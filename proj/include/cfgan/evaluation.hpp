#pragma once

// Measurement machinery: classification metrics, saliency masks and IoU, FID,
// uncertainty correlation and the GradCAM baseline.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfgan/autograd.hpp"
#include "cfgan/discriminator.hpp"
#include "cfgan/nn.hpp"

namespace cfgan::eval {

struct ClassificationMetrics {
    double accuracy = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0;
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Class 1 is the positive class.
ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels);

// Channel mean of |x - x_hat| per pixel: [N, C, H, W] -> [N, H, W], not normalised.
Tensor saliency_raw(const Tensor& x, const Tensor& x_hat);
// Per-plane min-max normalisation of [H, W] or [N, H, W]; constant planes become 0.
Tensor minmax_normalize(const Tensor& planes);
Tensor saliency_from_counterfactual(const Tensor& x, const Tensor& x_hat);

// Linear-interpolated quantile of unsorted values.
double quantile(std::vector<double> values, double q);
// Pixel positive iff value > quantile_q of the plane.
Tensor binarize_mask(const Tensor& mask, double q);
// 1 when both masks are empty.
double iou(const Tensor& pred, const Tensor& gt);

struct IouCurve {
    std::vector<std::pair<double, double>> points;  // (quantile, mean IoU)
    double max_iou = 0.0;
    double best_quantile = 0.0;
};

std::vector<double> default_quantiles();
// masks[i] and gts[i] are [H, W]; masks hold saliency values.
IouCurve iou_curve(const std::vector<Tensor>& masks, const std::vector<Tensor>& gts, std::span<const double> quantiles);

// Frechet distance between Gaussians fitted to rows of a [n, d] and b [m, d].
// shrinkage is added to both covariance diagonals; with shrinkage 0 a singular covariance throws.
double fid_from_embeddings(const Tensor& a, const Tensor& b, double shrinkage = 1e-6);

// Frozen random conv net: [N, C, H, W] -> [N, dim].
class RandomConvEmbedder {
public:
    RandomConvEmbedder(std::int64_t channels, std::uint64_t seed, std::int64_t dim = 64);
    Tensor embed(const Tensor& images, std::int64_t batch = 64) const;

private:
    nn::Conv2d c1_, c2_, c3_;
};

double fid(const Tensor& real, const Tensor& generated, const RandomConvEmbedder& embedder);

struct FidReport {
    double full = 0.0;  // all real vs all counterfactuals
    double und = 0.0;   // real undamaged vs counterfactuals of damaged inputs
    double dam = 0.0;   // real damaged vs counterfactuals of undamaged inputs
};

// Embeddings are rows; gen_sources[i] is the label of the input that produced generated row i.
FidReport fid_report(const Tensor& real_emb, std::span<const int> real_labels, const Tensor& gen_emb,
                     std::span<const int> gen_sources);

double nll_per_sample(double p1, int y);

struct PearsonResult {
    std::optional<double> r;
    std::string reason;  // why r is null
};

PearsonResult pearson(std::span<const double> x, std::span<const double> y);

// A model split at its last spatial map: feature_map(x) -> [N, C, h, w], scores(map, x) -> [N, K] logits.
struct CamModel {
    std::function<Tensor(const Tensor& x)> feature_map;
    std::function<Var(const Var& map, const Tensor& x)> scores;
};

CamModel cam_model(const Discriminator& d);
// [N, H, W] min-max normalised ReLU(sum_c alpha_c A_c), alpha = spatial mean of d score / d A.
Tensor gradcam(const CamModel& model, const Tensor& x, std::span<const int> class_idx);

// D's softmax triples in batches without recording a graph.
Tensor discriminator_probs(const Discriminator& d, const Tensor& images, std::int64_t batch = 64);

}  // namespace cfgan::eval
