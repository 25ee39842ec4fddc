#include "prunelab/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace prunelab {

std::string criterion_name(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::L1Norm: return "l1";
    case CriterionKind::ExpectedAbs: return "expected_abs";
    case CriterionKind::Pls: return "pls";
  }
  fail("unreachable criterion kind");
}

CriterionKind criterion_from_name(const std::string& name) {
  if (name == "l1") return CriterionKind::L1Norm;
  if (name == "expected_abs") return CriterionKind::ExpectedAbs;
  if (name == "pls") return CriterionKind::Pls;
  fail("unknown criterion '", name, "' (expected l1, expected_abs or pls)");
}

namespace {

ImportanceTable make_table(const NetworkGraph& net, const std::string& tag) {
  ImportanceTable t;
  t.criterion_tag = tag;
  t.net_revision = net.revision;
  t.arch_tag = net.arch_tag;
  return t;
}

double kernel_abs_sum(const Tensor& weight, int filter) {
  const std::int64_t per_filter = weight.numel() / weight.dim(0);
  const float* w = weight.values().data() + filter * per_filter;
  double acc = 0.0;
  for (std::int64_t i = 0; i < per_filter; ++i) acc += std::fabs(w[i]);
  return acc;
}

}  // namespace

ImportanceTable criterion_l1(NetworkGraph& net, StructureId::Kind kind) {
  ImportanceTable table = make_table(net, "l1");
  if (kind == StructureId::Kind::Filter) {
    net.for_each_conv([&](ConvUnit& u) {
      if (!u.prunable) return;
      for (int f = 0; f < u.out_channels(); ++f) {
        table.scores[{StructureId::Kind::Filter, u.conv_id, f}] =
            kernel_abs_sum(u.weight, f);
      }
    });
  } else {
    for (ResidualBlock& b : net.blocks) {
      if (!b.prunable) continue;
      double acc = 0.0;
      std::int64_t count = 0;
      for (const ConvUnit* u : {&b.conv1, &b.conv2}) {
        for (float v : u->weight.values()) acc += std::fabs(v);
        count += u->weight.numel();
      }
      table.scores[{StructureId::Kind::Block, b.block_id, -1}] =
          acc / static_cast<double>(count);
    }
  }
  return table;
}

StructureFeatures pooled_structure_features(NetworkGraph& net,
                                            StructureId::Kind kind,
                                            const DatasetSplit& sample) {
  check(sample.size() > 0, "calibration sample is empty");
  check(!sample.augmented, "augmented data must never reach a criterion");

  StructureFeatures feats;
  feats.structures = prunable_structures(net, kind);
  feats.rows = sample.size();
  feats.cols = static_cast<int>(feats.structures.size());
  feats.matrix.assign(
      static_cast<size_t>(feats.rows) * static_cast<size_t>(feats.cols), 0.0);

  // Column lookup: filters map (conv_id -> first column of that conv),
  // blocks map block_id -> column.
  std::unordered_map<int, int> col_base;
  for (int c = 0; c < feats.cols; ++c) {
    const StructureId& id = feats.structures[static_cast<size_t>(c)];
    if (id.kind == StructureId::Kind::Filter) {
      if (id.filter_index == 0) col_base[id.layer_index] = c;
    } else {
      col_base[id.layer_index] = c;
    }
  }

  constexpr int kBatch = 64;
  int row_off = 0;
  for (int begin = 0; begin < sample.size(); begin += kBatch) {
    const int end = std::min(sample.size(), begin + kBatch);
    DatasetSplit part = sample.slice(begin, end);
    const int rows = end - begin;

    ForwardHooks hooks;
    if (kind == StructureId::Kind::Filter) {
      hooks.on_conv_activation = [&](int conv_id, const Tensor& act) {
        auto it = col_base.find(conv_id);
        if (it == col_base.end()) return;
        const int c = act.dim(1);
        const std::int64_t plane =
            static_cast<std::int64_t>(act.dim(2)) * act.dim(3);
        const float* v = act.values().data();
        for (int r = 0; r < rows; ++r) {
          double* out_row =
              feats.matrix.data() +
              static_cast<size_t>(row_off + r) * static_cast<size_t>(feats.cols);
          for (int ch = 0; ch < c; ++ch) {
            const float* p = v + (static_cast<std::int64_t>(r) * c + ch) * plane;
            double acc = 0.0;
            for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
            out_row[it->second + ch] = acc / static_cast<double>(plane);
          }
        }
      };
    } else {
      hooks.on_block_output = [&](int block_id, const Tensor& act) {
        auto it = col_base.find(block_id);
        if (it == col_base.end()) return;
        const std::int64_t per_img = act.numel() / act.dim(0);
        const float* v = act.values().data();
        for (int r = 0; r < rows; ++r) {
          double acc = 0.0;
          const float* p = v + static_cast<std::int64_t>(r) * per_img;
          for (std::int64_t k = 0; k < per_img; ++k) acc += p[k];
          feats.matrix[static_cast<size_t>(row_off + r) *
                           static_cast<size_t>(feats.cols) +
                       static_cast<size_t>(it->second)] =
              acc / static_cast<double>(per_img);
        }
      };
    }
    forward(net, part.images, Mode::Eval, nullptr, &hooks);
    row_off += rows;
  }
  return feats;
}

ImportanceTable criterion_expected_abs(NetworkGraph& net,
                                       StructureId::Kind kind,
                                       const DatasetSplit& sample) {
  check(sample.size() > 0, "expected_abs requires a nonempty calibration sample");
  // Post-relu activations are non-negative, so the mean absolute activation
  // equals the mean of the pooled (spatial-mean) features.
  const StructureFeatures feats = pooled_structure_features(net, kind, sample);
  ImportanceTable table = make_table(net, "expected_abs");
  for (int c = 0; c < feats.cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < feats.rows; ++r) {
      acc += feats.matrix[static_cast<size_t>(r) * static_cast<size_t>(feats.cols) +
                          static_cast<size_t>(c)];
    }
    table.scores[feats.structures[static_cast<size_t>(c)]] =
        acc / static_cast<double>(feats.rows);
  }
  return table;
}

std::vector<double> pls_vip(const std::vector<double>& x_in, int n, int m,
                            const std::vector<double>& y_in, int j,
                            const PlsOptions& options) {
  check(n >= 2 && m >= 1 && j >= 1, "PLS needs at least 2 samples");
  check(options.n_components >= 1, "PLS needs at least one component");
  check(n >= options.n_components + 1, "PLS sample size ", n,
        " must exceed n_components ", options.n_components);

  std::vector<double> x = x_in;  // deflated in place
  const std::vector<double>& y = y_in;

  auto col_ss = [&](const std::vector<double>& a, int cols, int c) {
    double acc = 0.0;
    for (int r = 0; r < n; ++r) {
      const double v = a[static_cast<size_t>(r) * cols + c];
      acc += v * v;
    }
    return acc;
  };

  // Start u at the label column with the largest sum of squares (ties take
  // the lowest index).
  int u_col = 0;
  double best_ss = -1.0;
  for (int c = 0; c < j; ++c) {
    const double ss = col_ss(y, j, c);
    if (ss > best_ss + 1e-15) {
      best_ss = ss;
      u_col = c;
    }
  }

  const int a_total = options.n_components;
  std::vector<double> w_all(static_cast<size_t>(a_total) * m, 0.0);
  std::vector<double> ssy(static_cast<size_t>(a_total), 0.0);

  std::vector<double> u(static_cast<size_t>(n)), w(static_cast<size_t>(m)),
      t(static_cast<size_t>(n)), t_old(static_cast<size_t>(n)),
      q(static_cast<size_t>(j)), p(static_cast<size_t>(m));

  for (int a = 0; a < a_total; ++a) {
    for (int r = 0; r < n; ++r) u[static_cast<size_t>(r)] = y[static_cast<size_t>(r) * j + u_col];
    std::fill(t_old.begin(), t_old.end(), 0.0);

    int iter = 0;
    for (;; ++iter) {
      check(iter < options.max_iterations,
            "PLS did not converge within ", options.max_iterations,
            " iterations on component ", a + 1);
      // w = X'u / ||X'u||
      double wn = 0.0;
      for (int c = 0; c < m; ++c) {
        double acc = 0.0;
        for (int r = 0; r < n; ++r) acc += x[static_cast<size_t>(r) * m + c] * u[static_cast<size_t>(r)];
        w[static_cast<size_t>(c)] = acc;
        wn += acc * acc;
      }
      check(wn > 0.0, "PLS weight vector vanished; the feature matrix has no "
                      "covariance with the labels");
      wn = std::sqrt(wn);
      for (double& v : w) v /= wn;
      // t = Xw
      for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        const double* row = x.data() + static_cast<size_t>(r) * m;
        for (int c = 0; c < m; ++c) acc += row[c] * w[static_cast<size_t>(c)];
        t[static_cast<size_t>(r)] = acc;
      }
      // q = Y't / ||Y't||
      double qn = 0.0;
      for (int c = 0; c < j; ++c) {
        double acc = 0.0;
        for (int r = 0; r < n; ++r) acc += y[static_cast<size_t>(r) * j + c] * t[static_cast<size_t>(r)];
        q[static_cast<size_t>(c)] = acc;
        qn += acc * acc;
      }
      check(qn > 0.0, "PLS score vector is orthogonal to the labels");
      qn = std::sqrt(qn);
      for (double& v : q) v /= qn;
      // u = Yq
      for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        const double* row = y.data() + static_cast<size_t>(r) * j;
        for (int c = 0; c < j; ++c) acc += row[c] * q[static_cast<size_t>(c)];
        u[static_cast<size_t>(r)] = acc;
      }

      double diff = 0.0, tmax = 0.0;
      for (int r = 0; r < n; ++r) {
        diff = std::max(diff, std::fabs(t[static_cast<size_t>(r)] - t_old[static_cast<size_t>(r)]));
        tmax = std::max(tmax, std::fabs(t[static_cast<size_t>(r)]));
      }
      t_old = t;
      if (diff <= options.tolerance * std::max(1.0, tmax)) break;
    }

    double tt = 0.0;
    for (int r = 0; r < n; ++r) tt += t[static_cast<size_t>(r)] * t[static_cast<size_t>(r)];
    check(tt > 0.0, "PLS produced a zero score vector");

    // Explained label variance of this component: ||Y't||^2 / t't.
    double yt_norm2 = 0.0;
    for (int c = 0; c < j; ++c) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) acc += y[static_cast<size_t>(r) * j + c] * t[static_cast<size_t>(r)];
      yt_norm2 += acc * acc;
    }
    ssy[static_cast<size_t>(a)] = yt_norm2 / tt;

    // Deflate X by t p'.
    for (int c = 0; c < m; ++c) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) acc += x[static_cast<size_t>(r) * m + c] * t[static_cast<size_t>(r)];
      p[static_cast<size_t>(c)] = acc / tt;
    }
    for (int r = 0; r < n; ++r) {
      double* row = x.data() + static_cast<size_t>(r) * m;
      const double tv = t[static_cast<size_t>(r)];
      for (int c = 0; c < m; ++c) row[c] -= tv * p[static_cast<size_t>(c)];
    }

    std::copy(w.begin(), w.end(), w_all.begin() + static_cast<size_t>(a) * m);
  }

  double ssy_total = 0.0;
  for (double v : ssy) ssy_total += v;
  check(ssy_total > 0.0, "PLS explained no label variance");

  std::vector<double> vip(static_cast<size_t>(m), 0.0);
  for (int c = 0; c < m; ++c) {
    double acc = 0.0;
    for (int a = 0; a < a_total; ++a) {
      const double wv = w_all[static_cast<size_t>(a) * m + c];
      acc += ssy[static_cast<size_t>(a)] * wv * wv;
    }
    vip[static_cast<size_t>(c)] = std::sqrt(static_cast<double>(m) * acc / ssy_total);
  }
  return vip;
}

ImportanceTable criterion_pls(NetworkGraph& net, StructureId::Kind kind,
                              const DatasetSplit& sample,
                              const PlsOptions& options) {
  check(sample.class_count >= 2, "PLS requires at least two classes");
  check(sample.size() >= options.n_components + 1, "PLS sample size ",
        sample.size(), " must exceed n_components ", options.n_components);

  StructureFeatures feats = pooled_structure_features(net, kind, sample);
  const int n = feats.rows, m = feats.cols, j = sample.class_count;
  check(m >= 1, "network has no prunable structures of the requested kind");

  // Column-center X; flat columns stay exactly zero.
  for (int c = 0; c < m; ++c) {
    double acc = 0.0;
    for (int r = 0; r < n; ++r) acc += feats.matrix[static_cast<size_t>(r) * m + c];
    const double mean = acc / n;
    for (int r = 0; r < n; ++r) feats.matrix[static_cast<size_t>(r) * m + c] -= mean;
  }
  // One-hot labels, column-centered.
  std::vector<double> y(static_cast<size_t>(n) * j, 0.0);
  for (int r = 0; r < n; ++r) {
    y[static_cast<size_t>(r) * j + sample.labels[static_cast<size_t>(r)]] = 1.0;
  }
  for (int c = 0; c < j; ++c) {
    double acc = 0.0;
    for (int r = 0; r < n; ++r) acc += y[static_cast<size_t>(r) * j + c];
    const double mean = acc / n;
    for (int r = 0; r < n; ++r) y[static_cast<size_t>(r) * j + c] -= mean;
  }

  const std::vector<double> vip = pls_vip(feats.matrix, n, m, y, j, options);

  ImportanceTable table = make_table(net, "pls");
  for (int c = 0; c < m; ++c) {
    table.scores[feats.structures[static_cast<size_t>(c)]] = vip[static_cast<size_t>(c)];
  }
  return table;
}

ImportanceTable compute_criterion(NetworkGraph& net, CriterionKind criterion,
                                  StructureId::Kind kind,
                                  const DatasetSplit& sample,
                                  const PlsOptions& pls_options) {
  switch (criterion) {
    case CriterionKind::L1Norm: return criterion_l1(net, kind);
    case CriterionKind::ExpectedAbs: return criterion_expected_abs(net, kind, sample);
    case CriterionKind::Pls: return criterion_pls(net, kind, sample, pls_options);
  }
  fail("unreachable criterion kind");
}

std::string importance_table_to_json(const ImportanceTable& table) {
  nlohmann::json out;
  out["criterion"] = table.criterion_tag;
  out["iteration"] = table.produced_at_iteration;
  out["arch_tag"] = table.arch_tag;
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& [id, score] : table.scores) {
    scores.push_back(
        {{"structure", id.str()},
         {"kind", id.kind == StructureId::Kind::Filter ? "filter" : "block"},
         {"layer", id.layer_index},
         {"filter", id.filter_index},
         {"score", score}});
  }
  out["scores"] = std::move(scores);
  return out.dump(2);
}

}  // namespace prunelab
