#pragma once

#include "ldaqu/tensor.hpp"
#include "ldaqu/upsample.hpp"

namespace ldaqu {

// Desk-scale tasks for exercising the training path. BilinearTarget is
// realizable exactly; ShiftedTarget displaces the sampling positions by a
// fixed smooth field (max component 2 input pixels), which a uniform 3x3
// stencil cannot reach everywhere but a trained deformation can.
enum class TaskKind { BilinearTarget, ShiftedTarget };

struct ToyTask {
  TaskKind kind = TaskKind::BilinearTarget;
  double alpha = 2.0;
  Tensor<double> inputs;   // (n, C, H, W)
  Tensor<double> targets;  // (n, C, out_h, out_w)
};

ToyTask make_task(TaskKind kind, int n, int channels, int h, int w,
                  double alpha, Rng& rng);

// The shift field behind ShiftedTarget, exposed for tests.
Coord task_shift(int ox, int oy, int out_w, int out_h);

struct TrainLog {
  // losses[s] is the loss entering step s; the final entry is the loss after
  // the last update, so it matches the returned weights
  std::vector<double> losses;
  LdaAquWeights<double> weights;
  bool diverged = false;
};

// 0.5 * mean squared error
double mse_half_loss(const Tensor<double>& y, const Tensor<double>& target);

// Plain full-batch gradient descent. kind selects the trained operator:
// LdaAqu, or LaAqu with the offset predictor frozen at zero.
TrainLog train(const ToyTask& task, const UpsampleConfig& config, int steps,
               double lr, Rng& rng, UpsamplerKind kind = UpsamplerKind::LdaAqu);

}  // namespace ldaqu
