// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Self-contained gradient audit: every layer the model uses, checked against
// central finite differences in double precision on small random shapes.
// Used by the gradcheck CLI subcommand and the acceptance suite.

#ifndef DSE_GRADCHECK_HPP
#define DSE_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "dse/loss.hpp"
#include "dse/model.hpp"
#include "dse/nn.hpp"
#include "dse/tensor.hpp"

namespace dse {

struct GradAuditEntry {
  std::string layer;
  double max_rel_error = 0.0;
};

namespace audit_detail {

using DT = ad::Tensor<double>;
using TP = ad::Tape<double>;

inline DT rand_t(Rng& rng, ad::Shape shape, bool grad, double lo = -1.0, double hi = 1.0) {
  DT t = DT::zeros(std::move(shape), grad);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = uniform(rng, lo, hi);
  return t;
}

inline double check(const std::function<DT(TP*)>& make_loss, std::vector<DT> params,
                    double h = 1e-5) {
  TP tape;
  DT loss = make_loss(&tape);
  for (auto& p : params) p.zero_grad();
  tape.backward(loss);
  double worst = 0.0;
  for (auto& p : params)
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double keep = p.data()[i];
      p.data()[i] = keep + h;
      const double up = make_loss(nullptr).item();
      p.data()[i] = keep - h;
      const double dn = make_loss(nullptr).item();
      p.data()[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = p.grad()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  return worst;
}

inline DT proj(TP* tp, const DT& x, const DT& w) {
  return ad::reduce_sum(tp, ad::mul(tp, x, w));
}

}  // namespace audit_detail

// Runs the whole audit; deterministic for a given seed.
inline std::vector<GradAuditEntry> gradient_audit(std::uint64_t seed = 2024) {
  using namespace audit_detail;
  Rng rng(seed);
  std::vector<GradAuditEntry> out;
  auto push = [&](const std::string& name, double err) { out.push_back({name, err}); };

  {  // conv2d
    DT x = rand_t(rng, {2, 3, 8, 8}, true);
    DT w = rand_t(rng, {4, 3, 5, 3}, true, -0.4, 0.4);
    DT b = rand_t(rng, {4}, true);
    DT p = rand_t(rng, {2, 4, 4, 8}, false);
    push("conv2d", check([&](TP* tp) { return proj(tp, ad::conv2d(tp, x, w, b, 2, 1), p); },
                         {x, w, b}));
  }
  {  // conv_transpose2d
    DT x = rand_t(rng, {2, 3, 5, 6}, true);
    DT w = rand_t(rng, {3, 2, 5, 1}, true, -0.4, 0.4);
    DT b = rand_t(rng, {2}, true);
    DT p = rand_t(rng, {2, 2, 9, 6}, false);
    push("conv_transpose2d",
         check([&](TP* tp) { return proj(tp, ad::conv_transpose2d(tp, x, w, b, 2, 1), p); },
               {x, w, b}));
  }
  {  // lstm
    ad::LstmParams<double> lp{rand_t(rng, {3, 20}, true, -0.4, 0.4),
                              rand_t(rng, {5, 20}, true, -0.4, 0.4),
                              rand_t(rng, {20}, true, -0.2, 0.2)};
    DT x = rand_t(rng, {4, 2, 3}, true);
    DT p = rand_t(rng, {4, 2, 5}, false);
    push("lstm", check([&](TP* tp) { return proj(tp, ad::lstm(tp, x, lp), p); },
                       {x, lp.w, lp.u, lp.b}));
  }
  {  // gru (frequency path building block)
    ad::GruParams<double> gp{rand_t(rng, {3, 12}, true, -0.4, 0.4),
                             rand_t(rng, {4, 12}, true, -0.4, 0.4),
                             rand_t(rng, {12}, true, -0.2, 0.2)};
    DT x = rand_t(rng, {4, 2, 3}, true);
    DT p = rand_t(rng, {4, 2, 4}, false);
    push("gru", check([&](TP* tp) { return proj(tp, ad::gru(tp, x, gp), p); },
                      {x, gp.w, gp.u, gp.b}));
  }
  {  // layer norm
    DT x = rand_t(rng, {2, 6, 3, 4}, true);
    DT g = rand_t(rng, {6}, true, 0.5, 1.5);
    DT b = rand_t(rng, {6}, true);
    DT p = rand_t(rng, {2, 6, 3, 4}, false);
    push("layer_norm",
         check([&](TP* tp) { return proj(tp, ad::layer_norm_channels(tp, x, g, b), p); },
               {x, g, b}));
  }

  ModelConfig tiny;
  tiny.features = FeatureLayout::plain;
  tiny.encoder_channels = {4, 8, 8};
  tiny.kernel_f = 3;
  tiny.kernel_t = 2;
  tiny.lstm_hidden = 8;
  tiny.freq_hidden = 4;
  tiny.spatial_kernel = 3;
  tiny.bins = 9;
  auto w = init_weights<double>(tiny, seed);

  {  // CBAM gates
    DT x = rand_t(rng, {1, 8, 4, 5}, true);
    DT p = rand_t(rng, {1, 8, 1, 5}, false);
    push("cbam_channel_gate",
         check([&](TP* tp) { return proj(tp, detail::cbam_channel_gate(tp, x, w, "dec0.att"), p); },
               {x, w.at("dec0.att.fc1.w"), w.at("dec0.att.fc2.w"), w.at("dec0.att.fc2.b")}));
    DT ps = rand_t(rng, {1, 1, 4, 5}, false);
    push("cbam_spatial_gate",
         check([&](TP* tp) { return proj(tp, detail::cbam_spatial_gate(tp, x, w, "dec0.att"), ps); },
               {x, w.at("dec0.att.spatial.w"), w.at("dec0.att.spatial.b")}));
  }
  {  // DPRNN bottleneck
    DT x = rand_t(rng, {1, 8, 3, 4}, true);
    DT p = rand_t(rng, {1, 8, 3, 4}, false);
    push("dprnn_bottleneck",
         check([&](TP* tp) { return proj(tp, detail::dprnn_bottleneck(tp, x, w), p); },
               {x, w.at("freq.fwd.w"), w.at("freq.bwd.u"), w.at("time.w"), w.at("time.u")}));
  }
  {  // network end to end, loss gradient into a parameter subset; inputs sit
     // clear of the magnitude-squash relu kink
    DT x = rand_t(rng, {1, 4, 9, 6}, true, 0.1, 1.0);
    DT p = rand_t(rng, {1, 1, 9, 6}, false);
    push("mask_network",
         check([&](TP* tp) { return proj(tp, mask_network(tp, x, tiny, w), p); },
               {x, w.at("enc0.w"), w.at("dec1.w"), w.at("mask.w"), w.at("mask.b")}));
  }
  {  // stft / istft ops
    const StftConfig small(32, 16);
    DT x = rand_t(rng, {96}, true);
    DT p = rand_t(rng, {2, small.bins(), stft_num_frames(96, small)}, false);
    push("stft_op", check([&](TP* tp) { return proj(tp, ad::stft_op(tp, x, small), p); }, {x}));
    DT spec = rand_t(rng, {2, small.bins(), 5}, true);
    DT pw = rand_t(rng, {70}, false);
    push("istft_op",
         check([&](TP* tp) { return proj(tp, ad::istft_op(tp, spec, small, 70), pw); }, {spec}));
  }
  {  // combined loss
    DT est = rand_t(rng, {1200}, true, -0.8, 0.8);
    DT ref = rand_t(rng, {1200}, false, -0.8, 0.8);
    LossConfig cfg;
    cfg.resolutions = {{256, 128}, {512, 256}};
    push("combined_loss",
         check([&](TP* tp) { return combined_loss_t(tp, est, ref, cfg); }, {est}));
  }
  return out;
}

}  // namespace dse

#endif  // DSE_GRADCHECK_HPP
