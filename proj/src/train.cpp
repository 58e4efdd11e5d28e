#include "handfit/train.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "handfit/losses.hpp"
#include "handfit/parallel.hpp"

namespace handfit {

AdamWConfig AdamWConfig::from(const ModelConfig& c) {
  return {c.lr, c.beta1, c.beta2, c.adam_eps, c.weight_decay};
}

void adamw_update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, long t, const AdamWConfig& c) {
  require_same_shape(p, g, "adamw grad");
  require_same_shape(p, m, "adamw m");
  require_same_shape(p, v, "adamw v");
  if (t < 1) throw std::invalid_argument("adamw update count must start at 1");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= c.lr * c.weight_decay * p[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [k, g] : grads)
    for (double x : g.values()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [k, g] : grads) g *= s;
  }
  return norm;
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw std::invalid_argument("corrupt RNG state");
  return rng;
}

}  // namespace

Checkpoint init_checkpoint(const ModelConfig& cfg) {
  Checkpoint ck;
  ck.config = cfg;
  ck.params = build_variant(cfg);
  ck.rng_state = rng_to_string(std::mt19937_64(cfg.seed));
  return ck;
}

bool trainable_in(Phase phase, const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (phase == Phase::One) return starts("handpose.") || starts("struct.") || starts("appear.");
  return starts("denoiser.") || starts("garment.");
}

std::vector<PreparedSample> prepare_all(const HandFitModel& model, const std::vector<SceneSample>& samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const SceneSample& s : samples) out.push_back(model.prepare(s));
  return out;
}

std::vector<StepStats> train_phase(Checkpoint& ck, Phase phase, const std::vector<PreparedSample>& data,
                                   const TrainOptions& opts) {
  if (data.empty()) throw std::invalid_argument("training needs a nonempty dataset");
  const ModelConfig cfg = ck.config;
  cfg.validate();
  const int steps = opts.steps > 0 ? opts.steps : (phase == Phase::One ? cfg.steps_phase1 : cfg.steps_phase2);
  const AdamWConfig adam = AdamWConfig::from(cfg);

  HandFitModel model(cfg, std::move(ck.params));
  std::mt19937_64 rng = rng_from_string(ck.rng_state);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(0, cfg.T - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto pred = [phase](const std::string& n) { return trainable_in(phase, n); };
  const NoiseSchedule& sched = model.schedule();

  std::vector<StepStats> history;
  history.reserve(static_cast<std::size_t>(steps));
  try {
    for (int it = 0; it < steps; ++it) {
      // Draw the whole batch up front so the random stream does not depend
      // on which loss branches fire.
      struct Draw {
        std::size_t index;
        int t;
        Tensor eps;
      };
      std::vector<Draw> draws;
      for (int i = 0; i < cfg.batch_size; ++i) {
        Draw d{pick(rng), pick_t(rng), Tensor(data[0].z0.shape())};
        for (double& v : d.eps.values()) v = normal(rng);
        draws.push_back(std::move(d));
      }

      // One graph per sample so the batch can run on several threads;
      // gradients are reduced in batch order, keeping results independent of
      // the worker count.
      struct Slot {
        std::unique_ptr<Binder> binder;
        ag::Var noise, hand;
        int crops = 0;
      };
      std::vector<Slot> slots(draws.size());
      parallel_for(draws.size(), [&](std::size_t i) {
        const Draw& d = draws[i];
        const PreparedSample& s = data[d.index];
        Slot& sl = slots[i];
        sl.binder = std::make_unique<Binder>(model.params(), pred);
        const Tensor z_t = add_noise(s.z0, d.eps, d.t, sched);
        const ag::Var eps_hat = model.predict_eps(*sl.binder, s, z_t, d.t);
        sl.noise = noise_loss(ag::constant(d.eps), eps_hat);
        if (cfg.use_canny_loss && d.t <= cfg.R_t && !s.boxes.empty()) {
          HandCannyTerm term = hand_canny_term(z_t, eps_hat, d.t, cfg.R_t, sched, s.boxes, s.person, cfg.edge);
          sl.hand = term.sum;
          sl.crops = term.crops;
        }
      });

      StepStats st;
      st.step = ck.step;
      st.t_min = cfg.T;
      int crops = 0;
      double noise_sum = 0, hand_sum = 0;
      for (std::size_t i = 0; i < slots.size(); ++i) {
        st.t_min = std::min(st.t_min, draws[i].t);
        noise_sum += slots[i].noise->val()[0];
        if (slots[i].hand) hand_sum += slots[i].hand->val()[0];
        crops += slots[i].crops;
      }
      const double inv_b = 1.0 / cfg.batch_size;
      const double hand_w = crops > 0 ? cfg.lambda_hand / crops : 0.0;
      st.noise = noise_sum * inv_b;
      st.hand = crops > 0 ? hand_sum / crops : 0.0;
      st.total = st.noise + cfg.lambda_hand * st.hand;
      st.crops = crops;
      if (!std::isfinite(st.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << st.step << ": total " << st.total << ", noise " << st.noise << ", hand "
           << st.hand;
        throw TrainingError(os.str());
      }
      // Per-sample share of the batch objective
      // mean(noise) + lambda * sum(hand) / crops.
      std::vector<std::map<std::string, Tensor>> per_sample(slots.size());
      parallel_for(slots.size(), [&](std::size_t i) {
        Slot& sl = slots[i];
        ag::Var root = ag::scale(sl.noise, inv_b);
        if (sl.hand) root = ag::add(root, ag::scale(sl.hand, hand_w));
        ag::backward(root);
        per_sample[i] = sl.binder->gradients();
        sl = Slot{};
      });
      std::map<std::string, Tensor> grads = std::move(per_sample[0]);
      for (std::size_t i = 1; i < per_sample.size(); ++i)
        for (auto& [k, g] : per_sample[i]) grads.at(k) += g;
      st.grad_norm = clip_global_norm(grads, cfg.grad_clip);
      for (auto& [name, g] : grads) {
        Tensor& p = model.params().get(name);
        auto& m = ck.optimizer.m[name];
        auto& v = ck.optimizer.v[name];
        if (m.empty()) m = Tensor(p.shape());
        if (v.empty()) v = Tensor(p.shape());
        long& c = ck.optimizer.count[name];
        ++c;
        adamw_update(p, g, m, v, c, adam);
      }
      ++ck.step;
      history.push_back(st);
      if (opts.on_step) opts.on_step(st);
    }
  } catch (...) {
    ck.params = std::move(model.params());
    ck.rng_state = rng_to_string(rng);
    throw;
  }
  ck.params = std::move(model.params());
  ck.rng_state = rng_to_string(rng);
  return history;
}

}  // namespace handfit
