#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dualtsr {

// Dense H x W x C real grid, row-major (y, x, channel). Decoded images live
// in [-1, 1]; interpolants and velocities are unbounded.
struct ImageGrid {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<float> data;

    ImageGrid() = default;
    ImageGrid(int h_, int w_, int c_, float fill = 0.0f)
        : h(h_), w(w_), c(c_),
          data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    std::size_t size() const { return data.size(); }

    float& at(int y, int x, int ch) {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    float at(int y, int x, int ch) const {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }

    bool same_shape(const ImageGrid& o) const {
        return h == o.h && w == o.w && c == o.c;
    }
};

namespace imageflow {

// Linear interpolation path x_t = (1-t) x0 + t x1.
ImageGrid interpolate(const ImageGrid& x0, const ImageGrid& x1, double t);

// Constant path velocity x1 - x0.
ImageGrid velocity_target(const ImageGrid& x0, const ImageGrid& x1);

// Mean squared error over all entries.
double cfm_loss(const ImageGrid& v_pred, const ImageGrid& u_target);

// d(cfm_loss)/d(v_pred) = 2 (v_pred - u_target) / n.
ImageGrid cfm_loss_grad(const ImageGrid& v_pred, const ImageGrid& u_target);

// Guidance-rectified target u_t + w (v_cond - v_uncond); teacher outputs are
// constants by the caller's stop-gradient contract.
ImageGrid rectified_target(const ImageGrid& u_t, const ImageGrid& v_ema_cond,
                           const ImageGrid& v_ema_uncond, double w);

// Euler update x_s = x_t - (t - s) v_hat for s < t.
ImageGrid euler_step(const ImageGrid& x_t, const ImageGrid& v_hat, double t,
                     double s);

}  // namespace imageflow
}  // namespace dualtsr
