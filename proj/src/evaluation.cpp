#include "cfgan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "cfgan/image.hpp"
#include "cfgan/losses.hpp"

namespace cfgan::eval {

ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels) {
    if (preds.empty()) throw std::invalid_argument("classification_metrics: empty input");
    if (preds.size() != labels.size()) throw std::invalid_argument("classification_metrics: length mismatch");
    ClassificationMetrics m;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if ((labels[i] != 0 && labels[i] != 1) || (preds[i] != 0 && preds[i] != 1))
            throw std::invalid_argument("classification_metrics: labels must be 0 or 1");
        if (preds[i] == 1 && labels[i] == 1) ++m.tp;
        else if (preds[i] == 1) ++m.fp;
        else if (labels[i] == 1) ++m.fn;
        else ++m.tn;
    }
    const auto n = static_cast<double>(preds.size());
    m.accuracy = static_cast<double>(m.tp + m.tn) / n;
    m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

Tensor saliency_raw(const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape() || x.rank() != 4)
        throw std::invalid_argument("saliency: expected equal [N, C, H, W] shapes, got " + shape_str(x.shape()) +
                                    " and " + shape_str(x_hat.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({n, x.dim(2), x.dim(3)});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = 0; k < c; ++k)
            for (std::int64_t p = 0; p < hw; ++p) out[i * hw + p] += std::abs(x[(i * c + k) * hw + p] - x_hat[(i * c + k) * hw + p]);
    for (auto& v : out.data()) v /= static_cast<double>(c);
    return out;
}

Tensor minmax_normalize(const Tensor& planes) {
    if (planes.rank() != 2 && planes.rank() != 3) throw std::invalid_argument("minmax_normalize: expected [H, W] or [N, H, W]");
    const std::int64_t n = planes.rank() == 3 ? planes.dim(0) : 1;
    const std::int64_t hw = planes.numel() / std::max<std::int64_t>(n, 1);
    Tensor out(planes.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const double* p = planes.ptr() + i * hw;
        const auto [lo, hi] = std::minmax_element(p, p + hw);
        const double range = *hi - *lo;
        for (std::int64_t j = 0; j < hw; ++j) out[i * hw + j] = range > 0.0 ? (p[j] - *lo) / range : 0.0;
    }
    return out;
}

Tensor saliency_from_counterfactual(const Tensor& x, const Tensor& x_hat) { return minmax_normalize(saliency_raw(x, x_hat)); }

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: no values");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Tensor binarize_mask(const Tensor& mask, double q) {
    if (q < 0.0 || q >= 1.0) throw std::invalid_argument("binarize_mask: q must be in [0, 1)");
    const double thr = quantile(mask.values(), q);
    Tensor out(mask.shape());
    for (std::int64_t i = 0; i < mask.numel(); ++i) out[i] = mask[i] > thr ? 1.0 : 0.0;
    return out;
}

double iou(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape())
        throw std::invalid_argument("iou: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    std::int64_t inter = 0, uni = 0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const bool a = pred[i] > 0.5, b = gt[i] > 0.5;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> default_quantiles() { return {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99}; }

IouCurve iou_curve(const std::vector<Tensor>& masks, const std::vector<Tensor>& gts, std::span<const double> quantiles) {
    if (masks.size() != gts.size()) throw std::invalid_argument("iou_curve: masks and gts differ in length");
    if (masks.empty()) throw std::invalid_argument("iou_curve: no masks");
    IouCurve curve;
    curve.max_iou = -1.0;
    for (double q : quantiles) {
        double sum = 0.0;
        for (std::size_t i = 0; i < masks.size(); ++i) sum += iou(binarize_mask(masks[i], q), gts[i]);
        const double mean = sum / static_cast<double>(masks.size());
        curve.points.emplace_back(q, mean);
        if (mean > curve.max_iou) {
            curve.max_iou = mean;
            curve.best_quantile = q;
        }
    }
    return curve;
}

namespace {

struct Gaussian {
    Eigen::VectorXd mu;
    Eigen::MatrixXd cov;
};

Gaussian fit_gaussian(const Tensor& emb, double shrinkage) {
    if (emb.rank() != 2) throw std::invalid_argument("fid: embeddings must be [n, d]");
    const std::int64_t n = emb.dim(0), d = emb.dim(1);
    if (n < 2) throw std::invalid_argument("fid: need at least two samples per set");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(emb.ptr(), n, d);
    Gaussian g;
    g.mu = m.colwise().mean().transpose();
    const Eigen::MatrixXd centered = m.rowwise() - g.mu.transpose();
    g.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    g.cov.diagonal().array() += shrinkage;
    return g;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid_from_embeddings(const Tensor& a, const Tensor& b, double shrinkage) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("fid: embedding sets must share their dimension");
    if (shrinkage < 0.0) throw std::invalid_argument("fid: shrinkage must be >= 0");
    const Gaussian g1 = fit_gaussian(a, shrinkage), g2 = fit_gaussian(b, shrinkage);
    if (shrinkage == 0.0) {
        for (const auto* g : {&g1, &g2}) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g->cov, Eigen::EigenvaluesOnly);
            const double scale = std::max(1.0, g->cov.trace());
            if (es.eigenvalues().minCoeff() <= 1e-12 * scale)
                throw std::domain_error("fid: singular covariance; use shrinkage or more samples");
        }
    }
    const Eigen::MatrixXd s1 = psd_sqrt(g1.cov);
    Eigen::MatrixXd inner = s1 * g2.cov * s1;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return (g1.mu - g2.mu).squaredNorm() + g1.cov.trace() + g2.cov.trace() - 2.0 * tr_sqrt;
}

RandomConvEmbedder::RandomConvEmbedder(std::int64_t channels, std::uint64_t seed, std::int64_t dim) {
    Rng rng(seed);
    c1_ = nn::Conv2d(channels, 16, 3, 2, 1, rng);
    c2_ = nn::Conv2d(16, 32, 3, 2, 1, rng);
    c3_ = nn::Conv2d(32, dim, 3, 2, 1, rng);
    for (auto* c : {&c1_, &c2_, &c3_}) c->set_requires_grad(false);
}

Tensor RandomConvEmbedder::embed(const Tensor& images, std::int64_t batch) const {
    NoGradGuard guard;
    std::vector<Tensor> parts;
    for (std::int64_t s = 0; s < images.dim(0); s += batch) {
        Var x(images.slice_rows(s, std::min(images.dim(0), s + batch)));
        Var h = ops::leaky_relu(c1_(x));
        h = ops::leaky_relu(c2_(h));
        parts.push_back(ops::global_avg_pool(c3_(h)).value());
    }
    return concat_rows(parts);
}

double fid(const Tensor& real, const Tensor& generated, const RandomConvEmbedder& embedder) {
    return fid_from_embeddings(embedder.embed(real), embedder.embed(generated));
}

namespace {

Tensor select_rows(const Tensor& emb, std::span<const int> labels, int want) {
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == want) rows.push_back(emb.slice_rows(static_cast<std::int64_t>(i), static_cast<std::int64_t>(i) + 1));
    if (rows.empty()) throw std::invalid_argument("fid_report: empty subset for label " + std::to_string(want));
    return concat_rows(rows);
}

}  // namespace

FidReport fid_report(const Tensor& real_emb, std::span<const int> real_labels, const Tensor& gen_emb,
                     std::span<const int> gen_sources) {
    if (real_emb.dim(0) != static_cast<std::int64_t>(real_labels.size()) ||
        gen_emb.dim(0) != static_cast<std::int64_t>(gen_sources.size()))
        throw std::invalid_argument("fid_report: labels do not match embeddings");
    FidReport r;
    r.full = fid_from_embeddings(real_emb, gen_emb);
    r.und = fid_from_embeddings(select_rows(real_emb, real_labels, 0), select_rows(gen_emb, gen_sources, 1));
    r.dam = fid_from_embeddings(select_rows(real_emb, real_labels, 1), select_rows(gen_emb, gen_sources, 0));
    return r;
}

double nll_per_sample(double p1, int y) {
    const double p = std::clamp(p1, losses::kProbEps, 1.0 - losses::kProbEps);
    return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) return {std::nullopt, "fewer than two samples"};
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) return {std::nullopt, "first input is constant"};
    if (syy == 0.0) return {std::nullopt, "second input is constant"};
    return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), ""};
}

CamModel cam_model(const Discriminator& d) {
    CamModel m;
    const std::size_t branch = d.gradcam_branch();
    m.feature_map = [&d, branch](const Tensor& x) {
        NoGradGuard guard;
        return d.spatial_features(Var(x))[branch].value();
    };
    m.scores = [&d, branch](const Var& map, const Tensor& x) {
        std::vector<Var> maps;
        {
            NoGradGuard guard;
            maps = d.spatial_features(Var(x));
        }
        maps[branch] = map;
        return d.head(maps);
    };
    return m;
}

Tensor gradcam(const CamModel& model, const Tensor& x, std::span<const int> class_idx) {
    if (x.rank() != 4) throw std::invalid_argument("gradcam: expected [N, C, H, W]");
    const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (static_cast<std::int64_t>(class_idx.size()) != n) throw std::invalid_argument("gradcam: one class per sample");
    Tensor fmap = model.feature_map(x);
    if (fmap.rank() != 4 || fmap.dim(0) != n) throw std::invalid_argument("gradcam: model has no spatial feature map");
    const std::int64_t c = fmap.dim(1), fh = fmap.dim(2), fw = fmap.dim(3), fhw = fh * fw;

    Var leaf(fmap, true);
    Var scores = model.scores(leaf, x);
    Tensor grad = Tensor::zeros_like(fmap);
    if (scores.requires_grad()) {
        std::vector<std::int64_t> idx(class_idx.begin(), class_idx.end());
        ops::sum(ops::pick(scores, idx)).backward();
        if (leaf.has_grad()) grad = leaf.grad();
    }

    Tensor out({n, h, w});
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor cam({fh, fw});
        for (std::int64_t k = 0; k < c; ++k) {
            const double* g = grad.ptr() + (i * c + k) * fhw;
            const double* a = fmap.ptr() + (i * c + k) * fhw;
            double alpha = 0.0;
            for (std::int64_t p = 0; p < fhw; ++p) alpha += g[p];
            alpha /= static_cast<double>(fhw);
            for (std::int64_t p = 0; p < fhw; ++p) cam[p] += alpha * a[p];
        }
        for (auto& v : cam.data()) v = std::max(v, 0.0);
        Tensor up = minmax_normalize(image::resize_plane(cam, h, w));
        std::copy(up.data().begin(), up.data().end(), out.data().begin() + i * h * w);
    }
    return out;
}

Tensor discriminator_probs(const Discriminator& d, const Tensor& images, std::int64_t batch) {
    NoGradGuard guard;
    std::vector<Tensor> parts;
    for (std::int64_t s = 0; s < images.dim(0); s += batch)
        parts.push_back(d.probs(Var(images.slice_rows(s, std::min(images.dim(0), s + batch)))).value());
    return concat_rows(parts);
}

}  // namespace cfgan::eval
