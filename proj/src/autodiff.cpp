#include "emc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace emc::ad {

namespace {

void check_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_dims(a, b)) {
    throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
  }
}

}  // namespace

Tape::Node& Tape::node(Var v) {
  if (!v.ok() || v.id >= static_cast<int>(nodes_.size())) {
    throw std::runtime_error("tape: invalid var id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.ok() || v.id >= static_cast<int>(nodes_.size())) {
    throw std::runtime_error("tape: invalid var id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Tensor value, BackwardFn fn, bool trainable) {
  Node n;
  n.grad = Tensor::zeros(value.shape);
  n.value = std::move(value);
  n.back = std::move(fn);
  n.trainable = trainable;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

// Id the next pushed node will receive; lets ops capture their own output id
// in the backward closure.
#define EMC_NEXT_ID static_cast<int>(nodes_.size())

Var Tape::input(Tensor value) { return push(std::move(value), nullptr, false); }

Var Tape::param(Tensor value) { return push(std::move(value), nullptr, true); }

Var Tape::make_node(Tensor value, BackwardFn fn) { return push(std::move(value), std::move(fn), false); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const int m = A.rows(), k = A.cols(), k2 = B.rows(), n = B.cols();
  if (k != k2) {
    throw std::runtime_error("matmul: inner dimensions disagree " + shape_str(A.shape) + " vs " +
                             shape_str(B.shape));
  }
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
    }
  }
  const int ai = a.id, bi = b.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, bi, oi, m, k, n](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& A = t.value(Var{ai});
    const Tensor& B = t.value(Var{bi});
    Tensor& gA = t.grad(Var{ai});
    Tensor& gB = t.grad(Var{bi});
    // dA = G * B^T
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += G.at(i, j) * B.at(p, j);
        gA.at(i, p) += acc;
      }
    }
    // dB = A^T * G
    for (int p = 0; p < k; ++p) {
      for (int i = 0; i < m; ++i) {
        const double av = A.at(i, p);
        if (av == 0.0) continue;
        for (int j = 0; j < n; ++j) gB.at(p, j) += av * G.at(i, j);
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_dims(A, B, "add");
  Tensor out(A.shape, A.data);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  const int ai = a.id, bi = b.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, bi, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    Tensor& gB = t.grad(Var{bi});
    for (std::size_t i = 0; i < G.data.size(); ++i) {
      gA.data[i] += G.data[i];
      gB.data[i] += G.data[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw std::runtime_error("add_row: bias " + shape_str(R.shape) + " does not broadcast over " +
                             shape_str(A.shape));
  }
  Tensor out(A.shape, A.data);
  const int m = A.rows(), n = A.cols();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(i, j) += R.data[static_cast<std::size_t>(j)];
  }
  const int ai = a.id, ri = row.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, ri, oi, m, n](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    Tensor& gR = t.grad(Var{ri});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        gA.at(i, j) += G.at(i, j);
        gR.data[static_cast<std::size_t>(j)] += G.at(i, j);
      }
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_dims(A, B, "mul");
  Tensor out(A.shape, A.data);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  const int ai = a.id, bi = b.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, bi, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& A = t.value(Var{ai});
    const Tensor& B = t.value(Var{bi});
    Tensor& gA = t.grad(Var{ai});
    Tensor& gB = t.grad(Var{bi});
    for (std::size_t i = 0; i < G.data.size(); ++i) {
      gA.data[i] += G.data[i] * B.data[i];
      gB.data[i] += G.data[i] * A.data[i];
    }
  });
}

Var Tape::affine(Var a, double scale, double shift) {
  const Tensor& A = value(a);
  Tensor out(A.shape, A.data);
  for (double& v : out.data) v = scale * v + shift;
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi, scale](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (std::size_t i = 0; i < G.data.size(); ++i) gA.data[i] += scale * G.data[i];
  });
}

Var Tape::add_const(Var a, const Tensor& c) {
  const Tensor& A = value(a);
  check_same_dims(A, c, "add_const");
  Tensor out(A.shape, A.data);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (std::size_t i = 0; i < G.data.size(); ++i) gA.data[i] += G.data[i];
  });
}

Var Tape::relu(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.shape, A.data);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& A = t.value(Var{ai});
    Tensor& gA = t.grad(Var{ai});
    // subgradient at exactly 0 is 0
    for (std::size_t i = 0; i < G.data.size(); ++i) {
      if (A.data[i] > 0.0) gA.data[i] += G.data[i];
    }
  });
}

Var Tape::sigmoid(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.shape, A.data);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& O = t.value(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (std::size_t i = 0; i < G.data.size(); ++i) {
      const double s = O.data[i];
      gA.data[i] += G.data[i] * s * (1.0 - s);
    }
  });
}

Var Tape::tanh(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.shape, A.data);
  for (double& v : out.data) v = std::tanh(v);
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& O = t.value(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (std::size_t i = 0; i < G.data.size(); ++i) {
      gA.data[i] += G.data[i] * (1.0 - O.data[i] * O.data[i]);
    }
  });
}

Var Tape::log(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.shape, A.data);
  for (double& v : out.data) v = std::log(v);
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& A = t.value(Var{ai});
    Tensor& gA = t.grad(Var{ai});
    for (std::size_t i = 0; i < G.data.size(); ++i) gA.data[i] += G.data[i] / A.data[i];
  });
}

Var Tape::softmax_rows(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.shape);
  const int m = A.rows(), n = A.cols();
  for (int i = 0; i < m; ++i) {
    double mx = A.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, A.at(i, j));
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(A.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) out.at(i, j) /= z;
  }
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi, m, n](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    const Tensor& S = t.value(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (int i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += G.at(i, j) * S.at(i, j);
      for (int j = 0; j < n; ++j) gA.at(i, j) += S.at(i, j) * (G.at(i, j) - dot);
    }
  });
}

Var Tape::cross_entropy(Var probs, int target_index) {
  const Tensor& P = value(probs);
  if (P.rows() != 1) {
    throw std::runtime_error("cross_entropy: expected a probability row vector, got " +
                             shape_str(P.shape));
  }
  if (target_index < 0 || target_index >= P.cols()) {
    throw std::runtime_error("cross_entropy: target index " + std::to_string(target_index) +
                             " out of range [0, " + std::to_string(P.cols()) + ")");
  }
  const double p = P.data[static_cast<std::size_t>(target_index)];
  Tensor out = Tensor::scalar(-std::log(p + kLogEps));
  const int pi = probs.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [pi, oi, target_index](Tape& t) {
    const double g = t.grad(Var{oi}).data[0];
    const Tensor& P = t.value(Var{pi});
    Tensor& gP = t.grad(Var{pi});
    const std::size_t k = static_cast<std::size_t>(target_index);
    gP.data[k] += -g / (P.data[k] + kLogEps);
  });
}

Var Tape::sum(Var a) {
  const Tensor& A = value(a);
  double s = 0.0;
  for (double v : A.data) s += v;
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(Tensor::scalar(s), [ai, oi](Tape& t) {
    const double g = t.grad(Var{oi}).data[0];
    Tensor& gA = t.grad(Var{ai});
    for (double& v : gA.data) v += g;
  });
}

Var Tape::reduce_rows(Var a, Reduce kind) {
  const Tensor& A = value(a);
  const int m = A.rows(), n = A.cols();
  Tensor out({1, n});
  std::vector<int> argmax;
  switch (kind) {
    case Reduce::sum:
    case Reduce::mean:
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out.data[static_cast<std::size_t>(j)] += A.at(i, j);
      }
      if (kind == Reduce::mean) {
        for (double& v : out.data) v /= m;
      }
      break;
    case Reduce::max:
      argmax.assign(static_cast<std::size_t>(n), 0);
      for (int j = 0; j < n; ++j) {
        double best = A.at(0, j);
        for (int i = 1; i < m; ++i) {
          if (A.at(i, j) > best) {
            best = A.at(i, j);
            argmax[static_cast<std::size_t>(j)] = i;
          }
        }
        out.data[static_cast<std::size_t>(j)] = best;
      }
      break;
  }
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi, m, n, kind, argmax = std::move(argmax)](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (int j = 0; j < n; ++j) {
      const double g = G.data[static_cast<std::size_t>(j)];
      switch (kind) {
        case Reduce::sum:
          for (int i = 0; i < m; ++i) gA.at(i, j) += g;
          break;
        case Reduce::mean:
          for (int i = 0; i < m; ++i) gA.at(i, j) += g / m;
          break;
        case Reduce::max:
          gA.at(argmax[static_cast<std::size_t>(j)], j) += g;
          break;
      }
    }
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows()) {
    throw std::runtime_error("concat_cols: row counts differ " + shape_str(A.shape) + " vs " +
                             shape_str(B.shape));
  }
  const int m = A.rows(), na = A.cols(), nb = B.cols();
  Tensor out({m, na + nb});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < na; ++j) out.at(i, j) = A.at(i, j);
    for (int j = 0; j < nb; ++j) out.at(i, na + j) = B.at(i, j);
  }
  const int ai = a.id, bi = b.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, bi, oi, m, na, nb](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    Tensor& gB = t.grad(Var{bi});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < na; ++j) gA.at(i, j) += G.at(i, j);
      for (int j = 0; j < nb; ++j) gB.at(i, j) += G.at(i, na + j);
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: no inputs");
  const int n = value(parts[0]).cols();
  int total = 0;
  for (Var p : parts) {
    if (value(p).cols() != n) {
      throw std::runtime_error("concat_rows: column widths differ " +
                               shape_str(value(parts[0]).shape) + " vs " + shape_str(value(p).shape));
    }
    total += value(p).rows();
  }
  Tensor out({total, n});
  int r = 0;
  for (Var p : parts) {
    const Tensor& P = value(p);
    for (int i = 0; i < P.rows(); ++i, ++r) {
      for (int j = 0; j < n; ++j) out.at(r, j) = P.at(i, j);
    }
  }
  std::vector<int> ids;
  std::vector<int> rows;
  for (Var p : parts) {
    ids.push_back(p.id);
    rows.push_back(value(p).rows());
  }
  const int oi = EMC_NEXT_ID;
  return push(std::move(out), [ids = std::move(ids), rows = std::move(rows), oi, n](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    int r = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gP = t.grad(Var{ids[k]});
      for (int i = 0; i < rows[k]; ++i, ++r) {
        for (int j = 0; j < n; ++j) gP.at(i, j) += G.at(r, j);
      }
    }
  });
}

Var Tape::gather_rows(Var table, std::vector<int> indices) {
  const Tensor& T = value(table);
  const int rows = T.rows(), n = T.cols();
  for (int ix : indices) {
    if (ix < 0 || ix >= rows) {
      throw std::runtime_error("gather_rows: index " + std::to_string(ix) + " out of range [0, " +
                               std::to_string(rows) + ")");
    }
  }
  const int m = static_cast<int>(indices.size());
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(i, j) = T.at(indices[static_cast<std::size_t>(i)], j);
  }
  const int ti = table.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ti, oi, m, n, indices = std::move(indices)](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gT = t.grad(Var{ti});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) gT.at(indices[static_cast<std::size_t>(i)], j) += G.at(i, j);
    }
  });
}

Var Tape::reshape(Var a, Shape s) {
  const Tensor& A = value(a);
  if (numel_of(s) != A.numel()) {
    throw std::runtime_error("reshape: cannot view " + shape_str(A.shape) + " as " + shape_str(s));
  }
  Tensor out(std::move(s), A.data);
  const int ai = a.id, oi = EMC_NEXT_ID;
  return push(std::move(out), [ai, oi](Tape& t) {
    const Tensor& G = t.grad(Var{oi});
    Tensor& gA = t.grad(Var{ai});
    for (std::size_t i = 0; i < G.data.size(); ++i) gA.data[i] += G.data[i];
  });
}

void Tape::backward(Var loss) {
  const Tensor& L = value(loss);
  if (!L.is_scalar()) {
    throw std::runtime_error("backward: loss must be scalar, got " + shape_str(L.shape));
  }
  grad(loss).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.back) n.back(*this);
  }
}

#undef EMC_NEXT_ID

}  // namespace emc::ad
