#include "prunelab/training.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace prunelab {

namespace {

Tensor gather_batch(const DatasetSplit& data, const std::vector<int>& order,
                    int begin, int end, std::vector<int>& labels_out) {
  const std::int64_t stride = static_cast<std::int64_t>(data.channels()) *
                              data.height() * data.width();
  std::vector<float> values(static_cast<size_t>((end - begin) * stride));
  labels_out.resize(static_cast<size_t>(end - begin));
  const float* src = data.images.values().data();
  for (int i = begin; i < end; ++i) {
    const int s = order[static_cast<size_t>(i)];
    std::copy(src + s * stride, src + (s + 1) * stride,
              values.data() + static_cast<std::int64_t>(i - begin) * stride);
    labels_out[static_cast<size_t>(i - begin)] =
        data.labels[static_cast<size_t>(s)];
  }
  return Tensor::from_values(
      {end - begin, data.channels(), data.height(), data.width()},
      std::move(values));
}

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), j = logits.dim(1);
  const float* v = logits.values().data();
  int correct = 0;
  for (int r = 0; r < n; ++r) {
    const float* row = v + static_cast<std::int64_t>(r) * j;
    int best = 0;
    for (int k = 1; k < j; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (best == labels[static_cast<size_t>(r)]) ++correct;
  }
  return correct;
}

}  // namespace

float lr_at_epoch(const TrainHyper& hyper, int epoch) {
  float lr = hyper.lr;
  if (epoch > hyper.epochs / 2) lr *= 0.1f;
  if (epoch > (hyper.epochs * 3) / 4) lr *= 0.1f;
  return lr;
}

TrainResult train(NetworkGraph& net, const DatasetSplit& data,
                  const TrainHyper& hyper, SgdOptimizer* optimizer) {
  check(data.size() > 0, "training data is empty");
  check(!data.augmented, "training expects raw data; augmentation is applied internally");
  check(hyper.batch_size >= 1, "batch_size must be positive");
  check(hyper.epochs >= hyper.start_epoch, "epochs (", hyper.epochs,
        ") precede start_epoch (", hyper.start_epoch, ")");

  TrainResult result;
  std::vector<Tensor> params = net.trainable_params();
  SgdOptimizer local(hyper.lr, hyper.momentum, hyper.weight_decay);
  SgdOptimizer& opt = optimizer ? *optimizer : local;

  std::vector<int> order(static_cast<size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = hyper.start_epoch + 1; epoch <= hyper.epochs; ++epoch) {
    opt.set_lr(lr_at_epoch(hyper, epoch));
    Rng epoch_rng(mix_seed(hyper.seed, 0x5E9A0000ULL + static_cast<std::uint64_t>(epoch)));
    for (size_t i = 0; i + 1 < order.size(); ++i) {
      const size_t j = i + static_cast<size_t>(epoch_rng.uniform_int(order.size() - i));
      std::swap(order[i], order[j]);
    }

    double loss_acc = 0.0;
    std::int64_t correct = 0;
    int batch_index = 0;
    for (int begin = 0; begin < data.size(); begin += hyper.batch_size, ++batch_index) {
      const int end = std::min(data.size(), begin + hyper.batch_size);
      std::vector<int> labels;
      Tensor batch = gather_batch(data, order, begin, end, labels);
      if (hyper.use_augmentation) {
        DatasetSplit tmp;
        tmp.images = batch;
        tmp.labels = labels;
        tmp.class_count = data.class_count;
        const std::uint64_t batch_seed = mix_seed(
            hyper.seed, (static_cast<std::uint64_t>(epoch) << 24) ^
                            static_cast<std::uint64_t>(batch_index) ^
                            0xA7650000ULL);
        batch = augment(tmp, hyper.augment, batch_seed).images;
      }

      Tape tape;
      Tensor logits = forward(net, batch, Mode::Train, &tape);
      Tensor loss = softmax_cross_entropy(logits, labels, &tape);
      const double loss_value = loss.values()[0];
      check(std::isfinite(loss_value), "non-finite loss at epoch ", epoch,
            ", batch ", batch_index);
      backward(loss, tape);
      opt.step(params);

      loss_acc += loss_value * (end - begin);
      correct += count_correct(logits, labels);
    }

    net.epoch_counter = epoch;
    result.history.push_back({epoch, loss_acc / data.size(),
                              static_cast<double>(correct) / data.size()});

    if (std::find(hyper.snapshot_epochs.begin(), hyper.snapshot_epochs.end(),
                  epoch) != hyper.snapshot_epochs.end()) {
      TrainSnapshot snap;
      snap.epoch = epoch;
      snap.net = clone_network(net);
      for (Tensor& p : params) {
        const std::vector<float>* v = opt.velocity(p);
        snap.velocities.push_back(v ? *v : std::vector<float>());
      }
      result.snapshots.push_back(std::move(snap));
    }
  }
  return result;
}

double evaluate_images(NetworkGraph& net, const Tensor& images,
                       const std::vector<int>& labels, int workers) {
  check(images.ndim() == 4, "evaluate expects a 4-d image tensor");
  const int n = images.dim(0);
  check(n > 0, "cannot evaluate an empty sample set");
  check(static_cast<int>(labels.size()) == n, "label count mismatch");

  constexpr int kEvalBatch = 64;
  auto eval_range = [&](int begin, int end) -> std::int64_t {
    std::int64_t correct = 0;
    const std::int64_t stride = images.numel() / n;
    const float* src = images.values().data();
    for (int b = begin; b < end; b += kEvalBatch) {
      const int e = std::min(end, b + kEvalBatch);
      std::vector<float> vals(src + b * stride, src + e * stride);
      Tensor batch = Tensor::from_values(
          {e - b, images.dim(1), images.dim(2), images.dim(3)}, std::move(vals));
      Tensor logits = forward(net, batch, Mode::Eval);
      std::vector<int> lbl(labels.begin() + b, labels.begin() + e);
      correct += count_correct(logits, lbl);
    }
    return correct;
  };

  if (workers <= 1) {
    return static_cast<double>(eval_range(0, n)) / n;
  }
  const int w = std::min(workers, n);
  std::vector<std::int64_t> counts(static_cast<size_t>(w), 0);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(w));
  for (int t = 0; t < w; ++t) {
    const int begin = static_cast<int>(static_cast<std::int64_t>(n) * t / w);
    const int end = static_cast<int>(static_cast<std::int64_t>(n) * (t + 1) / w);
    threads.emplace_back([&, t, begin, end]() { counts[static_cast<size_t>(t)] = eval_range(begin, end); });
  }
  for (auto& th : threads) th.join();
  std::int64_t total = 0;
  for (std::int64_t c : counts) total += c;
  return static_cast<double>(total) / n;
}

double evaluate(NetworkGraph& net, const DatasetSplit& data, int workers) {
  check(!data.augmented, "augmented data must never reach evaluation");
  return evaluate_images(net, data.images, data.labels, workers);
}

}  // namespace prunelab
