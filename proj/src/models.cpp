// Copyright 2026 The milkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "milkit/models.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace milkit {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double truncated_normal(Rng& rng, std::normal_distribution<double>& normal, double sigma) {
  for (;;) {
    const double z = normal(rng);
    if (std::abs(z) <= 2.0) return z * sigma;
  }
}

}  // namespace

MatF init_tensor(const ModelConfig& cfg, const std::string& name, std::uint64_t seed) {
  for (const auto& s : layer_schema(cfg)) {
    if (s.name != name) continue;
    MatF t = MatF::Zero(s.rows, s.cols);
    if (ends_with(name, ".bias")) return t;
    if (name.find(".norm") != std::string::npos) return MatF::Ones(s.rows, s.cols);
    Rng rng(derive_seed(seed, name));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sigma = std::sqrt(2.0 / static_cast<double>(s.cols));
    // Column-major fill order is part of the determinism contract.
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = static_cast<float>(truncated_normal(rng, normal, sigma));
    return t;
  }
  throw ConfigError("layer '" + name + "' is not part of the " + to_string(cfg.arch) + " schema");
}

ParamsF build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParamsF p;
  for (const auto& s : layer_schema(cfg)) p.add(s.name, init_tensor(cfg, s.name, seed));
  return p;
}

namespace {

template <typename T>
Vec<T> classify(const Params<T>& p, const Vec<T>& z) {
  return p.at("classifier.weight") * z + p.at("classifier.bias").col(0);
}

}  // namespace

template <typename T>
ForwardOutput<T> forward(const Params<T>& p, const ModelConfig& cfg, const Mat<T>& bag, const ForwardOptions& opts,
                         ForwardCache<T>* cache_out) {
  if (bag.rows() < 1) throw DataError("bag has no instances");
  if (bag.cols() != cfg.in_dim)
    throw DataError("feature dimension mismatch: bag has " + std::to_string(bag.cols()) + ", model expects " +
                    std::to_string(cfg.in_dim));
  if (!bag.allFinite()) throw NumericError("bag contains non-finite features");

  ForwardCache<T> local;
  ForwardCache<T>& c = cache_out ? *cache_out : local;
  c = ForwardCache<T>{};
  Rng rng(opts.dropout_seed);
  const bool train = opts.train;

  c.input = bag;
  if (train && cfg.dropout_input > 0.0) {
    c.input_mask = nn::dropout_mask<T>(bag.rows(), bag.cols(), cfg.dropout_input, rng);
    c.input = c.input.cwiseProduct(c.input_mask);
  }

  Mat<T> h = c.input;
  for (int i = 0; i < cfg.n_fc_layers(); ++i) {
    const std::string pre = "fc." + std::to_string(i) + ".";
    c.fc_in.push_back(h);
    Mat<T> act = nn::relu<T>(nn::linear<T>(h, p.at(pre + "weight"), p.at(pre + "bias")));
    Mat<T> mask = train ? nn::dropout_mask<T>(act.rows(), act.cols(), cfg.dropout_ff, rng) : Mat<T>();
    h = mask.size() ? Mat<T>(act.cwiseProduct(mask)) : act;
    c.fc_act.push_back(std::move(act));
    c.fc_mask.push_back(std::move(mask));
  }
  c.instances = h;
  const Eigen::Index n = h.rows();

  ForwardOutput<T> out;
  switch (cfg.arch) {
    case Arch::kMean: {
      out.embedding = h.colwise().mean().transpose();
      out.attention = Vec<T>::Constant(n, T(1) / static_cast<T>(n));
      out.logits = classify(p, out.embedding);
      break;
    }
    case Arch::kMax: {
      c.instance_logits = nn::linear<T>(h, p.at("classifier.weight"), p.at("classifier.bias"));
      // Binary: instance with the highest positive-class logit. Multiclass:
      // instance holding the largest logit of any class. Ties -> lowest index.
      Eigen::Index best = 0;
      T best_val = -std::numeric_limits<T>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) {
        const T v = cfg.n_classes == 2 ? c.instance_logits(i, 1) : c.instance_logits.row(i).maxCoeff();
        if (v > best_val) {
          best_val = v;
          best = i;
        }
      }
      c.selected = best;
      out.logits = c.instance_logits.row(best).transpose();
      out.embedding = h.row(best).transpose();
      out.attention = Vec<T>::Zero(n);
      out.attention(best) = T(1);
      break;
    }
    case Arch::kAbmil:
    case Arch::kAuxMil: {
      c.gate_tanh = nn::linear<T>(h, p.at("attn.V.weight"), p.at("attn.V.bias")).array().tanh();
      c.gate_sigmoid = nn::sigmoid<T>(nn::linear<T>(h, p.at("attn.U.weight"), p.at("attn.U.bias")));
      c.gated = c.gate_tanh.cwiseProduct(c.gate_sigmoid);
      c.scores = (c.gated * p.at("attn.w.weight").transpose()).col(0);
      c.scores.array() += p.at("attn.w.bias")(0, 0);
      out.attention = nn::softmax<T>(c.scores);
      out.embedding = h.transpose() * out.attention;
      out.logits = classify(p, out.embedding);
      if (cfg.arch == Arch::kAuxMil) out.aux_logits = nn::linear<T>(h, p.at("aux.head.weight"), p.at("aux.head.bias"));
      break;
    }
    case Arch::kTransformer: {
      const Eigen::Index e = cfg.embed_dim;
      const Eigen::Index m = n + 1;
      const Eigen::Index dh = e / cfg.n_heads;
      const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
      Mat<T> x(m, e);
      x.row(0) = p.at("cls_token").row(0);
      x.bottomRows(n) = h;
      for (int b = 0; b < cfg.n_layers; ++b) {
        const std::string pre = "tx." + std::to_string(b) + ".";
        auto& bc = c.blocks.emplace_back();
        bc.input = x;
        bc.normed1 = nn::layer_norm<T>(x, p.at(pre + "norm1.weight"), p.at(pre + "norm1.bias"), bc.norm1);
        bc.qkv = nn::linear<T>(bc.normed1, p.at(pre + "qkv.weight"), p.at(pre + "qkv.bias"));
        bc.heads.resize(m, e);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
          const auto q = bc.qkv.middleCols(hd * dh, dh);
          const auto k = bc.qkv.middleCols(e + hd * dh, dh);
          const auto v = bc.qkv.middleCols(2 * e + hd * dh, dh);
          Mat<T> scores = (q * k.transpose()) * inv_sqrt;
          bc.probs.push_back(nn::softmax_rows<T>(scores));
          bc.heads.middleCols(hd * dh, dh) = bc.probs.back() * v;
        }
        bc.mid = x + nn::linear<T>(bc.heads, p.at(pre + "proj.weight"), p.at(pre + "proj.bias"));
        bc.normed2 = nn::layer_norm<T>(bc.mid, p.at(pre + "norm2.weight"), p.at(pre + "norm2.bias"), bc.norm2);
        if (cfg.encoder_hidden_dim) {
          bc.ff_act = nn::relu<T>(nn::linear<T>(bc.normed2, p.at(pre + "ff1.weight"), p.at(pre + "ff1.bias")));
          if (train) bc.ff_mask = nn::dropout_mask<T>(bc.ff_act.rows(), bc.ff_act.cols(), cfg.dropout_ff, rng);
          const Mat<T> dropped = bc.ff_mask.size() ? Mat<T>(bc.ff_act.cwiseProduct(bc.ff_mask)) : bc.ff_act;
          x = bc.mid + nn::linear<T>(dropped, p.at(pre + "ff2.weight"), p.at(pre + "ff2.bias"));
        } else {
          // Without a feedforward branch the second norm closes the block.
          x = bc.normed2;
        }
      }
      out.embedding = x.row(0).transpose();
      out.logits = classify(p, out.embedding);
      Vec<T> att = Vec<T>::Zero(n);
      for (const auto& pr : c.blocks.back().probs) att += pr.row(0).tail(n).transpose();
      const T total = att.sum();
      out.attention = total > T(0) ? Vec<T>(att / total) : Vec<T>::Constant(n, T(1) / static_cast<T>(n));
      break;
    }
  }
  c.embedding = out.embedding;
  if (!out.logits.allFinite()) throw NumericError("non-finite logits");
  return out;
}

template <typename T>
void backward(const Params<T>& p, const ModelConfig& cfg, const ForwardCache<T>& c, const Vec<T>& dlogits,
              const Mat<T>* daux, Params<T>& g) {
  const Mat<T>& h = c.instances;
  const Eigen::Index n = h.rows();
  Mat<T> dh = Mat<T>::Zero(n, h.cols());

  auto classifier_backward = [&]() -> Vec<T> {
    g.at("classifier.weight").noalias() += dlogits * c.embedding.transpose();
    g.at("classifier.bias").col(0) += dlogits;
    return p.at("classifier.weight").transpose() * dlogits;
  };

  switch (cfg.arch) {
    case Arch::kMean: {
      const Vec<T> dz = classifier_backward();
      dh.rowwise() += dz.transpose() / static_cast<T>(n);
      break;
    }
    case Arch::kMax: {
      Mat<T> dinst = Mat<T>::Zero(n, cfg.n_classes);
      dinst.row(c.selected) = dlogits.transpose();
      dh = nn::linear_backward<T>(h, p.at("classifier.weight"), dinst, g.at("classifier.weight"),
                                  g.at("classifier.bias"));
      break;
    }
    case Arch::kAbmil:
    case Arch::kAuxMil: {
      const Vec<T> dz = classifier_backward();
      const Vec<T> a = nn::softmax<T>(c.scores);
      dh.noalias() += a * dz.transpose();
      const Vec<T> da = h * dz;
      const Vec<T> ds = nn::softmax_backward<T>(a, da);
      g.at("attn.w.weight").row(0) += (c.gated.transpose() * ds).transpose();
      g.at("attn.w.bias")(0, 0) += ds.sum();
      const Mat<T> dgated = ds * p.at("attn.w.weight");
      const Mat<T> dpre_v =
          dgated.cwiseProduct(c.gate_sigmoid).cwiseProduct((T(1) - c.gate_tanh.array().square()).matrix());
      const Mat<T> dpre_u = dgated.cwiseProduct(c.gate_tanh)
                                .cwiseProduct(c.gate_sigmoid)
                                .cwiseProduct((T(1) - c.gate_sigmoid.array()).matrix());
      dh += nn::linear_backward<T>(h, p.at("attn.V.weight"), dpre_v, g.at("attn.V.weight"), g.at("attn.V.bias"));
      dh += nn::linear_backward<T>(h, p.at("attn.U.weight"), dpre_u, g.at("attn.U.weight"), g.at("attn.U.bias"));
      if (cfg.arch == Arch::kAuxMil && daux)
        dh += nn::linear_backward<T>(h, p.at("aux.head.weight"), *daux, g.at("aux.head.weight"),
                                     g.at("aux.head.bias"));
      break;
    }
    case Arch::kTransformer: {
      const Eigen::Index e = cfg.embed_dim;
      const Eigen::Index m = n + 1;
      const Eigen::Index dhd = e / cfg.n_heads;
      const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dhd));
      Mat<T> dx = Mat<T>::Zero(m, e);
      dx.row(0) = classifier_backward().transpose();
      for (int b = cfg.n_layers - 1; b >= 0; --b) {
        const std::string pre = "tx." + std::to_string(b) + ".";
        const auto& bc = c.blocks[b];
        Mat<T> dmid;
        if (cfg.encoder_hidden_dim) {
          dmid = dx;
          const Mat<T> dropped = bc.ff_mask.size() ? Mat<T>(bc.ff_act.cwiseProduct(bc.ff_mask)) : bc.ff_act;
          Mat<T> dact = nn::linear_backward<T>(dropped, p.at(pre + "ff2.weight"), dx, g.at(pre + "ff2.weight"),
                                               g.at(pre + "ff2.bias"));
          if (bc.ff_mask.size()) dact = dact.cwiseProduct(bc.ff_mask);
          const Mat<T> dpre1 = nn::relu_backward<T>(bc.ff_act, dact);
          const Mat<T> dnormed2 = nn::linear_backward<T>(bc.normed2, p.at(pre + "ff1.weight"), dpre1,
                                                         g.at(pre + "ff1.weight"), g.at(pre + "ff1.bias"));
          dmid += nn::layer_norm_backward<T>(bc.norm2, p.at(pre + "norm2.weight"), dnormed2,
                                             g.at(pre + "norm2.weight"), g.at(pre + "norm2.bias"));
        } else {
          dmid = nn::layer_norm_backward<T>(bc.norm2, p.at(pre + "norm2.weight"), dx, g.at(pre + "norm2.weight"),
                                            g.at(pre + "norm2.bias"));
        }
        const Mat<T> dheads = nn::linear_backward<T>(bc.heads, p.at(pre + "proj.weight"), dmid,
                                                     g.at(pre + "proj.weight"), g.at(pre + "proj.bias"));
        Mat<T> dqkv = Mat<T>::Zero(m, 3 * e);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
          const auto q = bc.qkv.middleCols(hd * dhd, dhd);
          const auto k = bc.qkv.middleCols(e + hd * dhd, dhd);
          const auto v = bc.qkv.middleCols(2 * e + hd * dhd, dhd);
          const Mat<T>& prob = bc.probs[hd];
          const auto dout = dheads.middleCols(hd * dhd, dhd);
          const Mat<T> dprob = dout * v.transpose();
          dqkv.middleCols(2 * e + hd * dhd, dhd) = prob.transpose() * dout;
          const Mat<T> dscores = nn::softmax_rows_backward<T>(prob, dprob) * inv_sqrt;
          dqkv.middleCols(hd * dhd, dhd) = dscores * k;
          dqkv.middleCols(e + hd * dhd, dhd) = dscores.transpose() * q;
        }
        const Mat<T> dnormed1 = nn::linear_backward<T>(bc.normed1, p.at(pre + "qkv.weight"), dqkv,
                                                       g.at(pre + "qkv.weight"), g.at(pre + "qkv.bias"));
        dx = dmid + nn::layer_norm_backward<T>(bc.norm1, p.at(pre + "norm1.weight"), dnormed1,
                                               g.at(pre + "norm1.weight"), g.at(pre + "norm1.bias"));
      }
      g.at("cls_token").row(0) += dx.row(0);
      dh = dx.bottomRows(n);
      break;
    }
  }

  for (int i = cfg.n_fc_layers() - 1; i >= 0; --i) {
    const std::string pre = "fc." + std::to_string(i) + ".";
    const Mat<T> dact = c.fc_mask[i].size() ? Mat<T>(dh.cwiseProduct(c.fc_mask[i])) : dh;
    const Mat<T> dpre = nn::relu_backward<T>(c.fc_act[i], dact);
    dh = nn::linear_backward<T>(c.fc_in[i], p.at(pre + "weight"), dpre, g.at(pre + "weight"), g.at(pre + "bias"));
  }
}

template <typename T>
LossResult<T> compute_loss(const ForwardOutput<T>& out, int label, const ModelConfig& cfg, double aux_weight) {
  if (label < 0 || label >= out.logits.size()) throw DataError("label out of range for logits");
  LossResult<T> r;
  const T bag_loss = nn::log_sum_exp<T>(out.logits) - out.logits(label);
  r.dlogits = nn::softmax<T>(out.logits);
  r.dlogits(label) -= T(1);
  r.loss = bag_loss;

  if (cfg.arch != Arch::kAuxMil || !out.aux_logits) return r;
  const Mat<T>& aux = *out.aux_logits;
  const Eigen::Index n = aux.rows();
  const Eigen::Index k = std::min<Eigen::Index>(8, n / 2);
  if (k == 0) return r;

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return out.attention(a) > out.attention(b); });
  const T w = static_cast<T>(aux_weight);
  const int other = cfg.n_classes;
  Mat<T> daux = Mat<T>::Zero(n, aux.cols());
  T aux_loss = 0;
  auto add = [&](Eigen::Index row, int target) {
    const Vec<T> z = aux.row(row).transpose();
    aux_loss += nn::log_sum_exp<T>(z) - z(target);
    Vec<T> d = nn::softmax<T>(z);
    d(target) -= T(1);
    daux.row(row) += d.transpose();
  };
  for (Eigen::Index i = 0; i < k; ++i) add(order[i], label);
  for (Eigen::Index i = 0; i < k; ++i) add(order[n - 1 - i], other);
  const T denom = static_cast<T>(2 * k);
  r.loss = (T(1) - w) * bag_loss + w * aux_loss / denom;
  r.dlogits *= (T(1) - w);
  r.daux = daux * (w / denom);
  return r;
}

#define MILKIT_INSTANTIATE(T)                                                                                    \
  template ForwardOutput<T> forward<T>(const Params<T>&, const ModelConfig&, const Mat<T>&, const ForwardOptions&, \
                                       ForwardCache<T>*);                                                        \
  template void backward<T>(const Params<T>&, const ModelConfig&, const ForwardCache<T>&, const Vec<T>&,         \
                            const Mat<T>*, Params<T>&);                                                          \
  template LossResult<T> compute_loss<T>(const ForwardOutput<T>&, int, const ModelConfig&, double);

MILKIT_INSTANTIATE(float)
MILKIT_INSTANTIATE(double)

#undef MILKIT_INSTANTIATE

}  // namespace milkit
