// Synthetic decalibration-recovery experiment: generates train/held-out
// scenes in memory, trains, and reports held-out errors along the way.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "lccal/datagen.hpp"
#include "lccal/trainer.hpp"

int main(int argc, char** argv) {
  using namespace lccal;
  CLI::App app{"synthetic decalibration-recovery experiment"};
  int train_scenes = 512, test_scenes = 64;
  long long iterations = 2000, eval_every = 500;
  double lr = 0.01, lambda = 1.0, appearance = 1.0, rot_scale = 1.0, trans_scale = 1.0, wd = 1e-4;
  int batch = 1, points = 3000;
  std::uint64_t seed = 1;
  std::string save;
  bool supervised = false;
  int width = 64, height = 32;
  double focal = 40.0;
  app.add_option("--width", width);
  app.add_option("--height", height);
  app.add_option("--focal", focal);
  int stem = 16;
  bool no_pe = false;
  app.add_option("--stem", stem);
  double trans_max = 0.10, rot_max_deg = 1.0;
  app.add_option("--trans-max", trans_max);
  app.add_option("--rot-max", rot_max_deg);
  app.add_flag("--no-pe", no_pe);
  app.add_flag("--supervised", supervised, "diagnostic: regress the true correction directly");
  app.add_option("--train", train_scenes);
  app.add_option("--test", test_scenes);
  app.add_option("--iterations", iterations);
  app.add_option("--eval-every", eval_every);
  app.add_option("--lr", lr);
  app.add_option("--weight-decay", wd);
  app.add_option("--lambda", lambda);
  app.add_option("--appearance", appearance);
  app.add_option("--rot-scale", rot_scale);
  app.add_option("--trans-scale", trans_scale);
  app.add_option("--batch", batch);
  app.add_option("--points", points);
  app.add_option("--seed", seed);
  app.add_option("--save", save);
  CLI11_PARSE(app, argc, argv);

  auto t0 = std::chrono::steady_clock::now();
  auto secs = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  SyntheticSceneSpec spec;
  spec.points_per_scene = points;
  spec.intrinsics = CameraIntrinsics{focal, focal, width / 2.0, height / 2.0, width, height};
  spec.azimuth_max = std::atan(width / 2.0 / focal) + deg_to_rad(6.0);
  spec.elevation_max = std::atan(height / 2.0 / focal) + deg_to_rad(5.0);
  spec.elevation_min = -spec.elevation_max - deg_to_rad(2.0);
  std::vector<CalibSample> train, test;
  for (int i = 0; i < train_scenes; ++i) {
    spec.seed = derive_seed(seed, 1, static_cast<std::uint64_t>(i));
    train.push_back(generate_scene(spec).sample);
  }
  TrainConfig tc;
  tc.decalib = DecalibRange{trans_max, deg_to_rad(rot_max_deg)};
  for (int i = 0; i < test_scenes; ++i) {
    spec.seed = derive_seed(seed, 2, static_cast<std::uint64_t>(i));
    test.push_back(decalibrate(generate_scene(spec).sample, tc.decalib, derive_seed(seed, 3, static_cast<std::uint64_t>(i))));
  }
  std::printf("generated in %.1fs\n", secs());
  const auto base = baseline_errors(test);
  std::printf("baseline: %.3f cm %.4f deg\n", base.trans_mean_cm, base.rot_mean_deg);

  NetworkConfig nc;
  nc.width = width;
  nc.height = height;
  nc.pose_stem_width = stem;
  nc.positional_encoding = !no_pe;
  nc.rotation_head_scale = rot_scale;
  nc.translation_head_scale = trans_scale;
  tc.initial_lr = lr;
  tc.weight_decay = wd;
  tc.total_iterations = iterations;
  tc.lambda = lambda;
  tc.appearance_weight = appearance;
  tc.batch_size = batch;
  tc.seed = seed;
  if (supervised) {
    PoseNet<float> net(nc);
    SgdMomentum opt(tc.momentum, tc.weight_decay, true);
    SampleSchedule sched(train.size(), seed);
    double acc = 0;
    for (long long step = 0; step < iterations; ++step) {
      ad::Tape<float> tape;
      const ad::BoundParameters<float> p(tape, net.params());
      std::vector<ad::Var<float>> losses;
      for (int b = 0; b < batch; ++b) {
        const auto v = sched.at(static_cast<std::uint64_t>(step * batch + b));
        CalibSample s = train[v.index];
        const SE3Transform delta = sample_decalibration(tc.decalib, v.decalib_seed);
        s.t_init = compose(delta, s.t_gt);
        const EulerPose target = euler_from_se3(inverse(delta));
        const auto in = tape.constant(make_network_input<float>(build_pseudo_image(s), nc));
        const auto out = net.forward(p, in);
        const double sr = tc.decalib.rot_max, st = tc.decalib.trans_max;
        const auto tgt = tape.constant(ad::Tensor<float>(ad::Shape{1, 6}, std::vector<float>{
            float(target.roll / sr), float(target.pitch / sr), float(target.yaw / sr), float(target.tx / st),
            float(target.ty / st), float(target.tz / st)}));
        const auto w = tape.constant(ad::Tensor<float>(ad::Shape{1, 6}, std::vector<float>{
            float(1 / sr), float(1 / sr), float(1 / sr), float(1 / st), float(1 / st), float(1 / st)}));
        const auto d = ad::sub(ad::mul(out, w), tgt);
        losses.push_back(ad::mean(ad::mul(d, d)));
      }
      ad::Var<float> sum = losses[0];
      for (std::size_t i = 1; i < losses.size(); ++i) sum = ad::add(sum, losses[i]);
      sum = ad::scalar_mul(sum, 1.0f / batch);
      acc += sum.value().item();
      const auto g = tape.backward(sum);
      std::vector<const ad::Tensor<float>*> gs;
      for (const auto& e : net.params().entries()) gs.push_back(&g[p[e.name]]);
      opt.step(net.params(), gs, cosine_lr(lr, step, iterations));
      if ((step + 1) % eval_every == 0) {
        const auto rep = evaluate(Calibrator(net), test);
        const auto tr = evaluate(Calibrator(net), std::vector<CalibSample>(train.begin(), train.begin() + std::min<std::size_t>(64, train.size())));
        std::printf("step %lld %.1fs mse %.4f held-out %.3f cm [%.2f %.2f %.2f] %.4f deg [%.3f %.3f %.3f]  (train-init %.3f cm %.4f deg)\n",
                    step + 1, secs(), acc / eval_every, rep.trans_mean_cm, rep.x_cm, rep.y_cm, rep.z_cm, rep.rot_mean_deg,
                    rep.roll_deg, rep.pitch_deg, rep.yaw_deg, tr.trans_mean_cm, tr.rot_mean_deg);
        std::fflush(stdout);
        acc = 0;
      }
    }
    return 0;
  }
  Trainer trainer(tc, nc, train);
  double acc_total = 0, acc_li = 0, acc_ld = 0;
  int acc_n = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    acc_total += r.total;
    acc_li += r.l_i;
    acc_ld += r.l_d;
    ++acc_n;
    if (std::getenv("TRACE") && r.step < 400 && r.step % 5 == 0)
      std::printf("  %lld L %.3f vp %zu pose %.4f %.4f %.4f | %.4f %.4f %.4f\n", r.step, r.total, r.valid_pred, r.pose[0],
                  r.pose[1], r.pose[2], r.pose[3], r.pose[4], r.pose[5]);
    if ((r.step + 1) % eval_every == 0 || r.step + 1 == iterations) {
      const auto rep = evaluate(Calibrator(trainer.model().posenet), test);
      std::printf("step %lld  %.1fs  loss %.4f (LI %.4f LD %.4f)  held-out %.3f cm [%.2f %.2f %.2f]  %.4f deg [%.3f %.3f %.3f]\n",
                  r.step + 1, secs(), acc_total / acc_n, acc_li / acc_n, acc_ld / acc_n, rep.trans_mean_cm, rep.x_cm,
                  rep.y_cm, rep.z_cm, rep.rot_mean_deg, rep.roll_deg, rep.pitch_deg, rep.yaw_deg);
      std::fflush(stdout);
      acc_total = acc_li = acc_ld = 0;
      acc_n = 0;
    }
  };
  trainer.run(hooks);
  if (!save.empty()) trainer.model().save(save);
  return 0;
}
