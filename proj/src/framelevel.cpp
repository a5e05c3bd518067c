#include "vle/framelevel.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vle/errors.hpp"
#include "vle/metrics.hpp"
#include "vle/rng.hpp"

namespace vle::framelevel {

namespace {

bool loss_clamped(double p) {
  return p <= metrics::kLogLossEpsilon || p >= 1.0 - metrics::kLogLossEpsilon;
}

void fill_gaussian(Eigen::MatrixXd& m, Rng& rng, double stddev) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = stddev * rng.normal();
  }
}

void pack_matrix(Eigen::VectorXd& flat, Eigen::Index& pos, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    flat.segment(pos, m.cols()) = m.row(r).transpose();
    pos += m.cols();
  }
}

void pack_vector(Eigen::VectorXd& flat, Eigen::Index& pos, const Eigen::VectorXd& v) {
  flat.segment(pos, v.size()) = v;
  pos += v.size();
}

Eigen::MatrixXd unpack_matrix(const Eigen::VectorXd& flat, Eigen::Index& pos, Eigen::Index rows,
                              Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    m.row(r) = flat.segment(pos, cols).transpose();
    pos += cols;
  }
  return m;
}

Eigen::VectorXd unpack_vector(const Eigen::VectorXd& flat, Eigen::Index& pos, Eigen::Index n) {
  Eigen::VectorXd v = flat.segment(pos, n);
  pos += n;
  return v;
}

// Classifier loss over one video's logits. Targets come from the sorted label
// list; dz receives the per-label loss derivative with the clamp honoured.
double classifier_loss(const Eigen::VectorXd& z, const std::vector<int>& labels,
                       Eigen::VectorXd* dz) {
  double loss = 0.0;
  std::size_t li = 0;
  for (Eigen::Index e = 0; e < z.size(); ++e) {
    double target = 0.0;
    if (li < labels.size() && labels[li] == static_cast<int>(e)) {
      target = 1.0;
      ++li;
    }
    const double p = linear::sigmoid(z(e));
    loss += metrics::log_loss(p, target);
    if (dz != nullptr) (*dz)(e) = loss_clamped(p) ? 0.0 : p - target;
  }
  return loss;
}

DbofParams zero_like(const DbofParams& p) {
  DbofParams z;
  z.up_weights = Eigen::MatrixXd::Zero(p.up_weights.rows(), p.up_weights.cols());
  z.up_biases = Eigen::VectorXd::Zero(p.up_biases.size());
  z.cls_weights = Eigen::MatrixXd::Zero(p.cls_weights.rows(), p.cls_weights.cols());
  z.cls_biases = Eigen::VectorXd::Zero(p.cls_biases.size());
  z.lambda = p.lambda;
  return z;
}

void add_into(DbofParams& acc, const DbofParams& v) {
  acc.up_weights += v.up_weights;
  acc.up_biases += v.up_biases;
  acc.cls_weights += v.cls_weights;
  acc.cls_biases += v.cls_biases;
}

LstmParams zero_like(const LstmParams& p) {
  LstmParams z;
  z.lambda = p.lambda;
  z.layers.reserve(p.layers.size());
  for (const auto& l : p.layers) {
    LstmLayerParams zl;
    auto zm = [](const Eigen::MatrixXd& m) {
      return Eigen::MatrixXd::Zero(m.rows(), m.cols()).eval();
    };
    auto zv = [](const Eigen::VectorXd& v) { return Eigen::VectorXd::Zero(v.size()).eval(); };
    zl.w_xi = zm(l.w_xi); zl.w_hi = zm(l.w_hi);
    zl.w_xf = zm(l.w_xf); zl.w_hf = zm(l.w_hf);
    zl.w_xc = zm(l.w_xc); zl.w_hc = zm(l.w_hc);
    zl.w_xo = zm(l.w_xo); zl.w_ho = zm(l.w_ho);
    zl.w_ci = zv(l.w_ci); zl.w_cf = zv(l.w_cf); zl.w_co = zv(l.w_co);
    zl.b_i = zv(l.b_i); zl.b_f = zv(l.b_f); zl.b_c = zv(l.b_c); zl.b_o = zv(l.b_o);
    z.layers.push_back(std::move(zl));
  }
  z.cls_weights = Eigen::MatrixXd::Zero(p.cls_weights.rows(), p.cls_weights.cols());
  return z;
}

void add_into(LstmParams& acc, const LstmParams& v) {
  for (std::size_t l = 0; l < acc.layers.size(); ++l) {
    auto& a = acc.layers[l];
    const auto& b = v.layers[l];
    a.w_xi += b.w_xi; a.w_hi += b.w_hi;
    a.w_xf += b.w_xf; a.w_hf += b.w_hf;
    a.w_xc += b.w_xc; a.w_hc += b.w_hc;
    a.w_xo += b.w_xo; a.w_ho += b.w_ho;
    a.w_ci += b.w_ci; a.w_cf += b.w_cf; a.w_co += b.w_co;
    a.b_i += b.b_i; a.b_f += b.b_f; a.b_c += b.b_c; a.b_o += b.b_o;
  }
  acc.cls_weights += v.cls_weights;
}

double l2_weights(const DbofParams& p) {
  return p.up_weights.squaredNorm() + p.cls_weights.squaredNorm();
}

double l2_weights(const LstmParams& p) {
  double sum = 0.0;
  for (const auto& l : p.layers) {
    sum += l.w_xi.squaredNorm() + l.w_hi.squaredNorm() + l.w_xf.squaredNorm() +
           l.w_hf.squaredNorm() + l.w_xc.squaredNorm() + l.w_hc.squaredNorm() +
           l.w_xo.squaredNorm() + l.w_ho.squaredNorm();
  }
  return sum + p.cls_weights.squaredNorm();
}

// grad = grad * inv + 2 * lambda * (weight matrices of params)
void finish_gradient(DbofParams& grad, const DbofParams& params, double inv, double lambda) {
  grad.up_weights = grad.up_weights * inv + 2.0 * lambda * params.up_weights;
  grad.up_biases *= inv;
  grad.cls_weights = grad.cls_weights * inv + 2.0 * lambda * params.cls_weights;
  grad.cls_biases *= inv;
}

void finish_gradient(LstmParams& grad, const LstmParams& params, double inv, double lambda) {
  for (std::size_t l = 0; l < grad.layers.size(); ++l) {
    auto& g = grad.layers[l];
    const auto& p = params.layers[l];
    g.w_xi = g.w_xi * inv + 2.0 * lambda * p.w_xi;
    g.w_hi = g.w_hi * inv + 2.0 * lambda * p.w_hi;
    g.w_xf = g.w_xf * inv + 2.0 * lambda * p.w_xf;
    g.w_hf = g.w_hf * inv + 2.0 * lambda * p.w_hf;
    g.w_xc = g.w_xc * inv + 2.0 * lambda * p.w_xc;
    g.w_hc = g.w_hc * inv + 2.0 * lambda * p.w_hc;
    g.w_xo = g.w_xo * inv + 2.0 * lambda * p.w_xo;
    g.w_ho = g.w_ho * inv + 2.0 * lambda * p.w_ho;
    g.w_ci *= inv; g.w_cf *= inv; g.w_co *= inv;
    g.b_i *= inv; g.b_f *= inv; g.b_c *= inv; g.b_o *= inv;
  }
  grad.cls_weights = grad.cls_weights * inv + 2.0 * lambda * params.cls_weights;
}

// Raw per-video loss and (optional) raw gradient sums for DBoF.
double dbof_video(const DbofParams& p, const std::vector<Eigen::VectorXd>& frames,
                  const std::vector<int>& labels, DbofParams* grad) {
  if (frames.empty()) throw InvalidArgument("dbof: video has no frames");
  const int units = p.up_width();
  std::vector<Eigen::VectorXd> activations;
  activations.reserve(frames.size());
  Eigen::VectorXd pooled;
  std::vector<std::size_t> argmax(static_cast<std::size_t>(units), 0);
  for (std::size_t j = 0; j < frames.size(); ++j) {
    if (frames[j].size() != p.up_weights.cols()) {
      throw InvalidArgument("dbof: frame dimension mismatch");
    }
    Eigen::VectorXd u = (p.up_weights * frames[j] + p.up_biases).cwiseMax(0.0);
    if (j == 0) {
      pooled = u;
    } else {
      for (int k = 0; k < units; ++k) {
        // strict > keeps the first argmax, where gradients route
        if (u(k) > pooled(k)) {
          pooled(k) = u(k);
          argmax[static_cast<std::size_t>(k)] = j;
        }
      }
    }
    if (grad != nullptr) activations.push_back(std::move(u));
  }

  const Eigen::VectorXd z = p.cls_weights * pooled + p.cls_biases;
  if (grad == nullptr) return classifier_loss(z, labels, nullptr);

  Eigen::VectorXd dz(z.size());
  const double loss = classifier_loss(z, labels, &dz);
  grad->cls_weights += dz * pooled.transpose();
  grad->cls_biases += dz;
  const Eigen::VectorXd dpool = p.cls_weights.transpose() * dz;
  for (int k = 0; k < units; ++k) {
    const std::size_t j = argmax[static_cast<std::size_t>(k)];
    if (activations[j](k) > 0.0) {
      grad->up_weights.row(k) += dpool(k) * frames[j].transpose();
      grad->up_biases(k) += dpool(k);
    }
  }
  return loss;
}

struct LayerTape {
  std::vector<Eigen::VectorXd> i, f, g, o, c, tanh_c, h;
};

void lstm_layer_forward(const LstmLayerParams& layer, const std::vector<Eigen::VectorXd>& inputs,
                        LayerTape* tape, Eigen::VectorXd* h_final) {
  const Eigen::Index hidden = layer.w_hi.rows();
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(hidden);
  for (const Eigen::VectorXd& x : inputs) {
    const Eigen::VectorXd i =
        (layer.w_xi * x + layer.w_hi * h + layer.w_ci.cwiseProduct(c) + layer.b_i)
            .unaryExpr([](double v) { return linear::sigmoid(v); });
    const Eigen::VectorXd f =
        (layer.w_xf * x + layer.w_hf * h + layer.w_cf.cwiseProduct(c) + layer.b_f)
            .unaryExpr([](double v) { return linear::sigmoid(v); });
    const Eigen::VectorXd g =
        (layer.w_xc * x + layer.w_hc * h + layer.b_c).array().tanh().matrix();
    const Eigen::VectorXd c_new = f.cwiseProduct(c) + i.cwiseProduct(g);
    const Eigen::VectorXd o =
        (layer.w_xo * x + layer.w_ho * h + layer.w_co.cwiseProduct(c_new) + layer.b_o)
            .unaryExpr([](double v) { return linear::sigmoid(v); });
    const Eigen::VectorXd tanh_c = c_new.array().tanh().matrix();
    h = o.cwiseProduct(tanh_c);
    c = c_new;
    if (tape != nullptr) {
      tape->i.push_back(i);
      tape->f.push_back(f);
      tape->g.push_back(g);
      tape->o.push_back(o);
      tape->c.push_back(c);
      tape->tanh_c.push_back(tanh_c);
      tape->h.push_back(h);
    }
  }
  if (h_final != nullptr) *h_final = h;
}

void check_lstm_shapes(const LstmParams& p, Eigen::Index frame_dim) {
  if (p.layers.empty()) throw InvalidArgument("lstm: no layers");
  Eigen::Index in = frame_dim;
  for (const auto& layer : p.layers) {
    if (layer.w_xi.cols() != in) throw InvalidArgument("lstm: layer input dimension mismatch");
    in = layer.w_hi.rows();
  }
}

// Raw per-video loss and (optional) raw gradient sums (full BPTT).
double lstm_video(const LstmParams& p, const std::vector<Eigen::VectorXd>& frames,
                  const std::vector<int>& labels, LstmParams* grad) {
  if (frames.empty()) throw InvalidArgument("lstm: video has no frames");
  check_lstm_shapes(p, frames.front().size());
  const std::size_t depth = p.layers.size();
  const std::size_t steps = frames.size();

  std::vector<LayerTape> tape(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const std::vector<Eigen::VectorXd>& inputs = l == 0 ? frames : tape[l - 1].h;
    lstm_layer_forward(p.layers[l], inputs, &tape[l], nullptr);
  }
  const Eigen::VectorXd& h_final = tape.back().h.back();
  const Eigen::VectorXd z = p.cls_weights * h_final;
  if (grad == nullptr) return classifier_loss(z, labels, nullptr);

  Eigen::VectorXd dz(z.size());
  const double loss = classifier_loss(z, labels, &dz);
  grad->cls_weights += dz * h_final.transpose();

  std::vector<Eigen::VectorXd> dh_ext(steps, Eigen::VectorXd());
  dh_ext[steps - 1] = p.cls_weights.transpose() * dz;

  for (std::size_t l = depth; l-- > 0;) {
    const LstmLayerParams& layer = p.layers[l];
    LstmLayerParams& glayer = grad->layers[l];
    const LayerTape& tp = tape[l];
    const std::vector<Eigen::VectorXd>& inputs = l == 0 ? frames : tape[l - 1].h;
    const Eigen::Index hidden = layer.w_hi.rows();
    const Eigen::VectorXd zero_h = Eigen::VectorXd::Zero(hidden);

    std::vector<Eigen::VectorXd> dx;
    if (l > 0) dx.assign(steps, Eigen::VectorXd());

    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(hidden);
    Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(hidden);
    for (std::size_t t = steps; t-- > 0;) {
      Eigen::VectorXd dh = dh_next;
      if (dh_ext[t].size() > 0) dh += dh_ext[t];

      const Eigen::VectorXd& i = tp.i[t];
      const Eigen::VectorXd& f = tp.f[t];
      const Eigen::VectorXd& g = tp.g[t];
      const Eigen::VectorXd& o = tp.o[t];
      const Eigen::VectorXd& tanh_c = tp.tanh_c[t];
      const Eigen::VectorXd& c_prev = t > 0 ? tp.c[t - 1] : zero_h;
      const Eigen::VectorXd& h_prev = t > 0 ? tp.h[t - 1] : zero_h;
      const Eigen::VectorXd& x = inputs[t];

      const Eigen::VectorXd d_o = dh.cwiseProduct(tanh_c);
      const Eigen::VectorXd dzo =
          d_o.cwiseProduct(o.cwiseProduct(Eigen::VectorXd::Ones(hidden) - o));
      Eigen::VectorXd dc = dh.cwiseProduct(o).cwiseProduct(
                               (1.0 - tanh_c.array().square()).matrix()) +
                           dc_next + dzo.cwiseProduct(layer.w_co);
      const Eigen::VectorXd dzg =
          dc.cwiseProduct(i).cwiseProduct((1.0 - g.array().square()).matrix());
      const Eigen::VectorXd dzi = dc.cwiseProduct(g).cwiseProduct(
          i.cwiseProduct(Eigen::VectorXd::Ones(hidden) - i));
      const Eigen::VectorXd dzf = dc.cwiseProduct(c_prev).cwiseProduct(
          f.cwiseProduct(Eigen::VectorXd::Ones(hidden) - f));

      glayer.w_xi += dzi * x.transpose();
      glayer.w_hi += dzi * h_prev.transpose();
      glayer.w_ci += dzi.cwiseProduct(c_prev);
      glayer.b_i += dzi;
      glayer.w_xf += dzf * x.transpose();
      glayer.w_hf += dzf * h_prev.transpose();
      glayer.w_cf += dzf.cwiseProduct(c_prev);
      glayer.b_f += dzf;
      glayer.w_xc += dzg * x.transpose();
      glayer.w_hc += dzg * h_prev.transpose();
      glayer.b_c += dzg;
      glayer.w_xo += dzo * x.transpose();
      glayer.w_ho += dzo * h_prev.transpose();
      glayer.w_co += dzo.cwiseProduct(tp.c[t]);
      glayer.b_o += dzo;

      dh_next = layer.w_hi.transpose() * dzi + layer.w_hf.transpose() * dzf +
                layer.w_hc.transpose() * dzg + layer.w_ho.transpose() * dzo;
      dc_next = dc.cwiseProduct(f) + dzi.cwiseProduct(layer.w_ci) + dzf.cwiseProduct(layer.w_cf);
      if (l > 0) {
        dx[t] = layer.w_xi.transpose() * dzi + layer.w_xf.transpose() * dzf +
                layer.w_xc.transpose() * dzg + layer.w_xo.transpose() * dzo;
      }
    }
    if (l > 0) dh_ext = std::move(dx);
  }
  return loss;
}

// Ordered per-video reduction shared by the objectives and the trainers.
// Videos are processed in `rows` order; each video's gradient lands in its own
// buffer and buffers are folded left to right, so any thread count reproduces
// the sequential result bit for bit.
template <class Params>
double batch_reduce(const Params& params, const std::vector<std::vector<Eigen::VectorXd>>& videos,
                    const linear::LabelSets& y, const std::vector<std::size_t>& rows, int threads,
                    const std::function<double(const Params&, const std::vector<Eigen::VectorXd>&,
                                               const std::vector<int>&, Params*)>& video_fn,
                    Params* grad) {
  const std::size_t wave = static_cast<std::size_t>(std::max(threads, 1));
  std::vector<double> losses(rows.size(), 0.0);
  std::vector<Params> buffers;
  std::vector<std::exception_ptr> errors(wave);

  for (std::size_t start = 0; start < rows.size(); start += wave) {
    const std::size_t stop = std::min(rows.size(), start + wave);
    if (grad != nullptr) {
      buffers.assign(stop - start, zero_like(params));
    }
    if (wave == 1 || stop - start == 1) {
      const std::size_t i = rows[start];
      losses[start] = video_fn(params, videos[i], y[i], grad ? &buffers[0] : nullptr);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(stop - start);
      for (std::size_t w = start; w < stop; ++w) {
        pool.emplace_back([&, w] {
          try {
            const std::size_t i = rows[w];
            losses[w] = video_fn(params, videos[i], y[i], grad ? &buffers[w - start] : nullptr);
          } catch (...) {
            errors[w - start] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
        e = nullptr;
      }
    }
    if (grad != nullptr) {
      for (auto& buf : buffers) add_into(*grad, buf);
    }
  }

  double loss = 0.0;
  for (const double v : losses) loss += v;
  return loss;
}

void check_sequence_inputs(const std::vector<FrameExample>& examples, int vocab,
                           const SequenceConfig& cfg) {
  cfg.train.validate();
  if (vocab < 1) throw InvalidArgument("train: vocabulary must be positive");
  if (examples.empty()) throw InvalidArgument("train: empty dataset");
  if (cfg.unroll < 1) throw InvalidArgument("train: unroll must be >= 1");
  if (cfg.hidden < 1) throw InvalidArgument("train: hidden must be >= 1");
  if (cfg.layers < 1) throw InvalidArgument("train: layers must be >= 1");
}

linear::LabelSets frame_label_sets(const std::vector<FrameExample>& examples, int vocab) {
  linear::LabelSets y;
  y.reserve(examples.size());
  for (const auto& ex : examples) {
    if (!ex.labels.empty() && (ex.labels.front() < 0 || ex.labels.back() >= vocab)) {
      throw InvalidArgument("train: label outside vocabulary for video " + ex.video_id);
    }
    y.push_back(ex.labels);
  }
  return y;
}

std::vector<std::vector<Eigen::VectorXd>> assemble_videos(
    const std::vector<FrameExample>& examples, FeatureMode mode) {
  std::vector<std::vector<Eigen::VectorXd>> videos;
  videos.reserve(examples.size());
  for (const auto& ex : examples) videos.push_back(assemble_frames(ex, mode));
  if (!videos.empty() && !videos.front().empty()) {
    const Eigen::Index dim = videos.front().front().size();
    for (const auto& v : videos) {
      for (const auto& f : v) {
        if (f.size() != dim) throw InvalidArgument("train: inconsistent frame dimensions");
      }
    }
  }
  return videos;
}

std::vector<std::size_t> self_check_rows(std::size_t n) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < std::min<std::size_t>(n, 3); ++i) rows.push_back(i);
  return rows;
}

}  // namespace

std::vector<Eigen::VectorXd> sample_frames(const FrameExample& example,
                                           const FrameSampleConfig& cfg, FeatureMode mode) {
  if (cfg.frames_per_video < 1) {
    throw InvalidArgument("sample_frames: frames_per_video must be >= 1");
  }
  const std::size_t frames = example.rgb.size();
  if (frames == 0) throw InvalidArgument("sample_frames: video has no frames");
  const auto want = static_cast<std::size_t>(cfg.frames_per_video);
  std::vector<std::size_t> picks;
  if (frames <= want) {
    picks.resize(frames);
    for (std::size_t j = 0; j < frames; ++j) picks[j] = j;
  } else {
    Rng rng(mix_seed(cfg.seed, fnv1a64(example.video_id)));
    picks = rng.sample_indices(frames, want);
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(picks.size());
  for (const std::size_t j : picks) out.push_back(assemble_frame(example, j, mode));
  return out;
}

Eigen::VectorXd frame_logistic_infer(const linear::LogisticParams& params,
                                     const std::vector<Eigen::VectorXd>& frames) {
  if (frames.empty()) throw InvalidArgument("frame_logistic_infer: no frames");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(params.vocab());
  for (const auto& frame : frames) {
    sum += linear::logistic_predict(params, frame);
  }
  return sum / static_cast<double>(frames.size());
}

linear::LogisticParams frame_logistic_train(const std::vector<FrameExample>& examples,
                                            const Vocabulary& vocab,
                                            const linear::TrainConfig& cfg,
                                            const FrameSampleConfig& sample, FeatureMode mode,
                                            linear::TrainTrace* trace) {
  if (examples.empty()) throw InvalidArgument("train: empty dataset");
  std::vector<Eigen::VectorXd> rows;
  linear::LabelSets y;
  for (const auto& ex : examples) {
    if (!ex.labels.empty() && (ex.labels.front() < 0 || ex.labels.back() >= vocab.size)) {
      throw InvalidArgument("train: label outside vocabulary for video " + ex.video_id);
    }
    for (auto& frame : sample_frames(ex, sample, mode)) {
      rows.push_back(std::move(frame));
      y.push_back(ex.labels);
    }
  }
  Eigen::MatrixXd matrix(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != matrix.cols()) {
      throw InvalidArgument("train: inconsistent frame dimensions");
    }
    matrix.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  }
  return linear::logistic_train_features(linear::DenseFeatures(std::move(matrix)), y, vocab.size,
                                         cfg, trace);
}

Eigen::VectorXd dbof_forward(const DbofParams& params,
                             const std::vector<Eigen::VectorXd>& frames) {
  if (frames.empty()) throw InvalidArgument("dbof_forward: no frames");
  Eigen::VectorXd pooled;
  for (std::size_t j = 0; j < frames.size(); ++j) {
    if (frames[j].size() != params.up_weights.cols()) {
      throw InvalidArgument("dbof_forward: frame dimension mismatch");
    }
    const Eigen::VectorXd u = (params.up_weights * frames[j] + params.up_biases).cwiseMax(0.0);
    pooled = j == 0 ? u : pooled.cwiseMax(u).eval();
  }
  Eigen::VectorXd z = params.cls_weights * pooled + params.cls_biases;
  for (Eigen::Index e = 0; e < z.size(); ++e) z(e) = linear::sigmoid(z(e));
  return z;
}

LstmState lstm_cell_step(const LstmLayerParams& layer, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev) {
  if (x.size() != layer.w_xi.cols() || h_prev.size() != layer.w_hi.rows() ||
      c_prev.size() != layer.w_hi.rows()) {
    throw InvalidArgument("lstm_cell_step: dimension mismatch");
  }
  Eigen::VectorXd i =
      (layer.w_xi * x + layer.w_hi * h_prev + layer.w_ci.cwiseProduct(c_prev) + layer.b_i)
          .unaryExpr([](double v) { return linear::sigmoid(v); });
  Eigen::VectorXd f =
      (layer.w_xf * x + layer.w_hf * h_prev + layer.w_cf.cwiseProduct(c_prev) + layer.b_f)
          .unaryExpr([](double v) { return linear::sigmoid(v); });
  Eigen::VectorXd g = (layer.w_xc * x + layer.w_hc * h_prev + layer.b_c).array().tanh().matrix();
  Eigen::VectorXd c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  Eigen::VectorXd o =
      (layer.w_xo * x + layer.w_ho * h_prev + layer.w_co.cwiseProduct(c) + layer.b_o)
          .unaryExpr([](double v) { return linear::sigmoid(v); });
  LstmState state;
  state.c = c;
  state.h = o.cwiseProduct(c.array().tanh().matrix());
  return state;
}

std::vector<std::size_t> unroll_indices(std::size_t frames, int unroll) {
  if (unroll < 1) throw InvalidArgument("unroll_indices: unroll must be >= 1");
  if (frames == 0) return {};
  std::vector<std::size_t> picks;
  if (frames <= static_cast<std::size_t>(unroll)) {
    picks.resize(frames);
    for (std::size_t j = 0; j < frames; ++j) picks[j] = j;
    return picks;
  }
  picks.reserve(static_cast<std::size_t>(unroll));
  for (int m = 0; m < unroll; ++m) {
    picks.push_back(static_cast<std::size_t>(m) * frames / static_cast<std::size_t>(unroll));
  }
  return picks;
}

Eigen::VectorXd lstm_forward(const LstmParams& params, const std::vector<Eigen::VectorXd>& frames,
                             int unroll) {
  if (frames.empty()) throw InvalidArgument("lstm_forward: no frames");
  check_lstm_shapes(params, frames.front().size());
  const std::vector<std::size_t> picks = unroll_indices(frames.size(), unroll);
  std::vector<Eigen::VectorXd> inputs;
  inputs.reserve(picks.size());
  for (const std::size_t j : picks) inputs.push_back(frames[j]);

  Eigen::VectorXd h_final;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    LayerTape tape;
    lstm_layer_forward(params.layers[l], inputs, l + 1 < params.layers.size() ? &tape : nullptr,
                       &h_final);
    if (l + 1 < params.layers.size()) inputs = std::move(tape.h);
  }
  Eigen::VectorXd z = params.cls_weights * h_final;
  for (Eigen::Index e = 0; e < z.size(); ++e) z(e) = linear::sigmoid(z(e));
  return z;
}

DbofParams dbof_init(int vocab, int dim, int up_width, const linear::TrainConfig& cfg) {
  if (vocab < 1 || dim < 1) throw InvalidArgument("dbof_init: vocab and dim must be positive");
  const int units = up_width > 0 ? up_width : 8 * dim;
  DbofParams params;
  params.lambda = cfg.lambda;
  params.up_weights.resize(units, dim);
  params.up_biases = Eigen::VectorXd::Zero(units);
  params.cls_weights.resize(vocab, units);
  params.cls_biases = Eigen::VectorXd::Zero(vocab);
  Rng rng(mix_seed(cfg.seed, fnv1a64("dbof-init")));
  fill_gaussian(params.up_weights, rng, 1.0 / std::sqrt(static_cast<double>(dim)));
  fill_gaussian(params.cls_weights, rng, 1.0 / std::sqrt(static_cast<double>(units)));
  return params;
}

LstmParams lstm_init(int vocab, int dim, int hidden, int layers,
                     const linear::TrainConfig& cfg) {
  if (vocab < 1 || dim < 1 || hidden < 1 || layers < 1) {
    throw InvalidArgument("lstm_init: sizes must be positive");
  }
  LstmParams params;
  params.lambda = cfg.lambda;
  const std::uint64_t base = mix_seed(cfg.seed, fnv1a64("lstm-init"));
  for (int l = 0; l < layers; ++l) {
    const int in = l == 0 ? dim : hidden;
    const double sx = 1.0 / std::sqrt(static_cast<double>(in));
    const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
    Rng rng(mix_seed(base, static_cast<std::uint64_t>(l)));
    LstmLayerParams layer;
    layer.w_xi.resize(hidden, in); layer.w_hi.resize(hidden, hidden);
    layer.w_xf.resize(hidden, in); layer.w_hf.resize(hidden, hidden);
    layer.w_xc.resize(hidden, in); layer.w_hc.resize(hidden, hidden);
    layer.w_xo.resize(hidden, in); layer.w_ho.resize(hidden, hidden);
    fill_gaussian(layer.w_xi, rng, sx);
    fill_gaussian(layer.w_hi, rng, sh);
    fill_gaussian(layer.w_xf, rng, sx);
    fill_gaussian(layer.w_hf, rng, sh);
    fill_gaussian(layer.w_xc, rng, sx);
    fill_gaussian(layer.w_hc, rng, sh);
    fill_gaussian(layer.w_xo, rng, sx);
    fill_gaussian(layer.w_ho, rng, sh);
    layer.w_ci = Eigen::VectorXd::Zero(hidden);
    layer.w_cf = Eigen::VectorXd::Zero(hidden);
    layer.w_co = Eigen::VectorXd::Zero(hidden);
    layer.b_i = Eigen::VectorXd::Zero(hidden);
    layer.b_f = Eigen::VectorXd::Zero(hidden);
    layer.b_c = Eigen::VectorXd::Zero(hidden);
    layer.b_o = Eigen::VectorXd::Zero(hidden);
    params.layers.push_back(std::move(layer));
  }
  params.cls_weights.resize(vocab, hidden);
  Rng crng(mix_seed(base, fnv1a64("cls")));
  fill_gaussian(params.cls_weights, crng, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return params;
}

double dbof_batch_objective(const DbofParams& params,
                            const std::vector<std::vector<Eigen::VectorXd>>& videos,
                            const linear::LabelSets& y, const std::vector<std::size_t>& rows,
                            DbofParams* grad) {
  if (rows.empty()) throw InvalidArgument("dbof_batch_objective: empty batch");
  if (grad != nullptr) *grad = zero_like(params);
  const double loss = batch_reduce<DbofParams>(params, videos, y, rows, 1, dbof_video, grad);
  const double inv = 1.0 / static_cast<double>(rows.size());
  if (grad != nullptr) finish_gradient(*grad, params, inv, params.lambda);
  return loss * inv + params.lambda * l2_weights(params);
}

double lstm_batch_objective(const LstmParams& params,
                            const std::vector<std::vector<Eigen::VectorXd>>& videos,
                            const linear::LabelSets& y, const std::vector<std::size_t>& rows,
                            LstmParams* grad) {
  if (rows.empty()) throw InvalidArgument("lstm_batch_objective: empty batch");
  if (grad != nullptr) *grad = zero_like(params);
  const double loss = batch_reduce<LstmParams>(params, videos, y, rows, 1, lstm_video, grad);
  const double inv = 1.0 / static_cast<double>(rows.size());
  if (grad != nullptr) finish_gradient(*grad, params, inv, params.lambda);
  return loss * inv + params.lambda * l2_weights(params);
}

Eigen::VectorXd dbof_flatten(const DbofParams& params) {
  const Eigen::Index total = params.up_weights.size() + params.up_biases.size() +
                             params.cls_weights.size() + params.cls_biases.size();
  Eigen::VectorXd flat(total);
  Eigen::Index pos = 0;
  pack_matrix(flat, pos, params.up_weights);
  pack_vector(flat, pos, params.up_biases);
  pack_matrix(flat, pos, params.cls_weights);
  pack_vector(flat, pos, params.cls_biases);
  return flat;
}

DbofParams dbof_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, int up_width,
                          double lambda) {
  const Eigen::Index expect = static_cast<Eigen::Index>(up_width) * dim + up_width +
                              static_cast<Eigen::Index>(vocab) * up_width + vocab;
  if (flat.size() != expect) throw InvalidArgument("dbof_unflatten: size mismatch");
  DbofParams params;
  params.lambda = lambda;
  Eigen::Index pos = 0;
  params.up_weights = unpack_matrix(flat, pos, up_width, dim);
  params.up_biases = unpack_vector(flat, pos, up_width);
  params.cls_weights = unpack_matrix(flat, pos, vocab, up_width);
  params.cls_biases = unpack_vector(flat, pos, vocab);
  return params;
}

Eigen::VectorXd lstm_flatten(const LstmParams& params) {
  Eigen::Index total = params.cls_weights.size();
  for (const auto& l : params.layers) {
    total += l.w_xi.size() + l.w_hi.size() + l.w_ci.size() + l.b_i.size();
    total += l.w_xf.size() + l.w_hf.size() + l.w_cf.size() + l.b_f.size();
    total += l.w_xc.size() + l.w_hc.size() + l.b_c.size();
    total += l.w_xo.size() + l.w_ho.size() + l.w_co.size() + l.b_o.size();
  }
  Eigen::VectorXd flat(total);
  Eigen::Index pos = 0;
  for (const auto& l : params.layers) {
    pack_matrix(flat, pos, l.w_xi);
    pack_matrix(flat, pos, l.w_hi);
    pack_vector(flat, pos, l.w_ci);
    pack_vector(flat, pos, l.b_i);
    pack_matrix(flat, pos, l.w_xf);
    pack_matrix(flat, pos, l.w_hf);
    pack_vector(flat, pos, l.w_cf);
    pack_vector(flat, pos, l.b_f);
    pack_matrix(flat, pos, l.w_xc);
    pack_matrix(flat, pos, l.w_hc);
    pack_vector(flat, pos, l.b_c);
    pack_matrix(flat, pos, l.w_xo);
    pack_matrix(flat, pos, l.w_ho);
    pack_vector(flat, pos, l.w_co);
    pack_vector(flat, pos, l.b_o);
  }
  pack_matrix(flat, pos, params.cls_weights);
  return flat;
}

LstmParams lstm_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, int hidden, int layers,
                          double lambda) {
  Eigen::Index expect = static_cast<Eigen::Index>(vocab) * hidden;
  for (int l = 0; l < layers; ++l) {
    const Eigen::Index in = l == 0 ? dim : hidden;
    expect += 4 * static_cast<Eigen::Index>(hidden) * in +
              4 * static_cast<Eigen::Index>(hidden) * hidden +
              7 * static_cast<Eigen::Index>(hidden);
  }
  if (flat.size() != expect) throw InvalidArgument("lstm_unflatten: size mismatch");
  LstmParams params;
  params.lambda = lambda;
  Eigen::Index pos = 0;
  for (int l = 0; l < layers; ++l) {
    const Eigen::Index in = l == 0 ? dim : hidden;
    LstmLayerParams layer;
    layer.w_xi = unpack_matrix(flat, pos, hidden, in);
    layer.w_hi = unpack_matrix(flat, pos, hidden, hidden);
    layer.w_ci = unpack_vector(flat, pos, hidden);
    layer.b_i = unpack_vector(flat, pos, hidden);
    layer.w_xf = unpack_matrix(flat, pos, hidden, in);
    layer.w_hf = unpack_matrix(flat, pos, hidden, hidden);
    layer.w_cf = unpack_vector(flat, pos, hidden);
    layer.b_f = unpack_vector(flat, pos, hidden);
    layer.w_xc = unpack_matrix(flat, pos, hidden, in);
    layer.w_hc = unpack_matrix(flat, pos, hidden, hidden);
    layer.b_c = unpack_vector(flat, pos, hidden);
    layer.w_xo = unpack_matrix(flat, pos, hidden, in);
    layer.w_ho = unpack_matrix(flat, pos, hidden, hidden);
    layer.w_co = unpack_vector(flat, pos, hidden);
    layer.b_o = unpack_vector(flat, pos, hidden);
    params.layers.push_back(std::move(layer));
  }
  params.cls_weights = unpack_matrix(flat, pos, vocab, hidden);
  return params;
}

namespace {

template <class Params>
Params train_sequence_impl(
    Params init, const std::vector<std::vector<Eigen::VectorXd>>& videos,
    const linear::LabelSets& y, const linear::TrainConfig& cfg,
    const std::function<double(const Params&, const std::vector<Eigen::VectorXd>&,
                               const std::vector<int>&, Params*)>& video_fn,
    const std::function<Eigen::VectorXd(const Params&)>& flatten,
    const std::function<Params(const Eigen::VectorXd&)>& unflatten, linear::TrainTrace* trace,
    const char* name) {
  if (cfg.gradient_self_check) {
    const std::vector<std::size_t> rows = self_check_rows(videos.size());
    GradProblem problem;
    problem.loss = [&](const Eigen::VectorXd& flat) {
      const Params p = unflatten(flat);
      const double raw = batch_reduce<Params>(p, videos, y, rows, 1, video_fn, nullptr);
      return raw / static_cast<double>(rows.size()) + p.lambda * l2_weights(p);
    };
    problem.gradient = [&](const Eigen::VectorXd& flat) {
      const Params p = unflatten(flat);
      Params g = zero_like(p);
      batch_reduce<Params>(p, videos, y, rows, 1, video_fn, &g);
      finish_gradient(g, p, 1.0 / static_cast<double>(rows.size()), p.lambda);
      return flatten(g);
    };
    const double err =
        certified_gradient_error(problem, flatten(init), mix_seed(cfg.seed, fnv1a64(name)));
    if (err >= 1e-4) {
      throw GradientCheckError(std::string(name) +
                               ": analytic gradient failed finite-difference check "
                               "(max relative error " +
                               std::to_string(err) + ")");
    }
  }

  Eigen::VectorXd flat = flatten(init);
  Eigen::VectorXd accum = Eigen::VectorXd::Zero(flat.size());
  const std::size_t n = videos.size();
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  if (trace != nullptr) trace->step_loss.clear();

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = linear::epoch_order(cfg.seed, epoch, n);
    for (std::size_t start = 0; start < n; start += batch_size, ++step) {
      const std::size_t stop = std::min(n, start + batch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Params params = unflatten(flat);
      Params grad = zero_like(params);
      const auto batch_tag = [&] {
        std::string ids;
        for (std::size_t i = 0; i < rows.size() && i < 8; ++i) {
          ids += (i > 0 ? "," : "") + std::to_string(rows[i]);
        }
        if (rows.size() > 8) ids += ",...";
        return std::string(name) + ": non-finite loss at step " + std::to_string(step) +
               " (batch rows " + ids + ")";
      };
      double raw;
      try {
        // A diverged model scores NaN, which the loss rejects; inputs were
        // validated up front, so a throw here means the optimizer blew up.
        raw = batch_reduce<Params>(params, videos, y, rows, cfg.threads, video_fn, &grad);
      } catch (const Error& inner) {
        throw Error(batch_tag() + ": " + inner.what());
      }
      const double inv = 1.0 / static_cast<double>(rows.size());
      if (!std::isfinite(raw * inv)) throw Error(batch_tag());
      finish_gradient(grad, params, inv, params.lambda);
      linear::adagrad_update(flat, accum, flatten(grad), cfg.learning_rate, cfg.adagrad_epsilon);
      if (trace != nullptr) trace->step_loss.push_back(raw * inv);
    }
  }
  return unflatten(flat);
}

}  // namespace

DbofParams dbof_train(const std::vector<FrameExample>& examples, const Vocabulary& vocab,
                      const SequenceConfig& cfg, FeatureMode mode, linear::TrainTrace* trace) {
  check_sequence_inputs(examples, vocab.size, cfg);
  const linear::LabelSets y = frame_label_sets(examples, vocab.size);
  const std::vector<std::vector<Eigen::VectorXd>> videos = assemble_videos(examples, mode);
  const int dim = static_cast<int>(videos.front().front().size());
  DbofParams init = dbof_init(vocab.size, dim, cfg.up_width, cfg.train);
  const int units = init.up_width();
  const double lambda = cfg.train.lambda;
  return train_sequence_impl<DbofParams>(
      std::move(init), videos, y, cfg.train, dbof_video, dbof_flatten,
      [&](const Eigen::VectorXd& flat) {
        return dbof_unflatten(flat, vocab.size, dim, units, lambda);
      },
      trace, "dbof_train");
}

LstmParams lstm_train(const std::vector<FrameExample>& examples, const Vocabulary& vocab,
                      const SequenceConfig& cfg, FeatureMode mode, linear::TrainTrace* trace) {
  check_sequence_inputs(examples, vocab.size, cfg);
  const linear::LabelSets y = frame_label_sets(examples, vocab.size);
  std::vector<std::vector<Eigen::VectorXd>> videos = assemble_videos(examples, mode);
  // The unroll stride fixes each video's input sequence up front.
  for (auto& v : videos) {
    const std::vector<std::size_t> picks = unroll_indices(v.size(), cfg.unroll);
    if (picks.size() == v.size()) continue;
    std::vector<Eigen::VectorXd> strided;
    strided.reserve(picks.size());
    for (const std::size_t j : picks) strided.push_back(std::move(v[j]));
    v = std::move(strided);
  }
  const int dim = static_cast<int>(videos.front().front().size());
  LstmParams init = lstm_init(vocab.size, dim, cfg.hidden, cfg.layers, cfg.train);
  const double lambda = cfg.train.lambda;
  const int hidden = cfg.hidden;
  const int layers = cfg.layers;
  return train_sequence_impl<LstmParams>(
      std::move(init), videos, y, cfg.train, lstm_video, lstm_flatten,
      [&](const Eigen::VectorXd& flat) {
        return lstm_unflatten(flat, vocab.size, dim, hidden, layers, lambda);
      },
      trace, "lstm_train");
}

SequenceParams train_sequence_model(SequenceModelKind kind,
                                    const std::vector<FrameExample>& examples,
                                    const Vocabulary& vocab, const SequenceConfig& cfg,
                                    FeatureMode mode, linear::TrainTrace* trace) {
  if (kind == SequenceModelKind::dbof) {
    return dbof_train(examples, vocab, cfg, mode, trace);
  }
  return lstm_train(examples, vocab, cfg, mode, trace);
}

}  // namespace vle::framelevel
