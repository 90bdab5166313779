#include "eduseg/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eduseg {

namespace {

constexpr std::size_t Y = kNumLabels;

template <typename T>
T log_sum_exp(const T* v, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) total += std::exp(v[i] - mx);
  return mx + std::log(total);
}

template <typename T>
void check_lattice(const Tensor<T>& emissions, const CrfParams<T>& p) {
  if (emissions.rank() != 2 || emissions.cols() != Y || emissions.rows() == 0) {
    throw ShapeError("CRF lattice must be T x 2 with T >= 1, got " + shape_string(emissions.shape()));
  }
  if (p.trans.size() != Y * Y || p.start.size() != Y || p.end.size() != Y) {
    throw ShapeError("CRF transition/start/end scores have the wrong size");
  }
}

template <typename T>
void check_gold(std::span<const int> gold, std::size_t len) {
  if (gold.size() != len) {
    throw ContractError("gold sequence has " + std::to_string(gold.size()) +
                        " labels for a lattice of length " + std::to_string(len));
  }
  for (int y : gold) {
    if (y < 0 || static_cast<std::size_t>(y) >= Y) {
      throw ContractError("invalid label " + std::to_string(y));
    }
  }
}

// alpha[t][y]: log-sum over prefixes ending in y at t (emission at t included).
template <typename T>
std::vector<T> forward_table(const Tensor<T>& e, const CrfParams<T>& p) {
  const std::size_t n = e.rows();
  std::vector<T> alpha(n * Y);
  for (std::size_t y = 0; y < Y; ++y) alpha[y] = p.start[y] + e.at(0, y);
  T tmp[Y];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < Y; ++y) {
      for (std::size_t prev = 0; prev < Y; ++prev) tmp[prev] = alpha[(t - 1) * Y + prev] + p.trans[prev * Y + y];
      alpha[t * Y + y] = e.at(t, y) + log_sum_exp(tmp, Y);
    }
  }
  return alpha;
}

// beta[t][y]: log-sum over suffixes after t given y_t = y (end score included).
template <typename T>
std::vector<T> backward_table(const Tensor<T>& e, const CrfParams<T>& p) {
  const std::size_t n = e.rows();
  std::vector<T> beta(n * Y);
  for (std::size_t y = 0; y < Y; ++y) beta[(n - 1) * Y + y] = p.end[y];
  T tmp[Y];
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t y = 0; y < Y; ++y) {
      for (std::size_t next = 0; next < Y; ++next) {
        tmp[next] = p.trans[y * Y + next] + e.at(t + 1, next) + beta[(t + 1) * Y + next];
      }
      beta[t * Y + y] = log_sum_exp(tmp, Y);
    }
  }
  return beta;
}

template <typename T>
T log_z_from(const std::vector<T>& alpha, const CrfParams<T>& p, std::size_t n) {
  T tmp[Y];
  for (std::size_t y = 0; y < Y; ++y) tmp[y] = alpha[(n - 1) * Y + y] + p.end[y];
  return log_sum_exp(tmp, Y);
}

template <typename T>
T gold_score(const Tensor<T>& e, const CrfParams<T>& p, std::span<const int> gold) {
  T s = p.start[gold[0]];
  for (std::size_t t = 0; t < gold.size(); ++t) {
    s += e.at(t, gold[t]);
    if (t > 0) s += p.trans[gold[t - 1] * Y + gold[t]];
  }
  return s + p.end[gold.back()];
}

template <typename T>
CrfMarginals<T> compute_marginals(const Tensor<T>& e, const CrfParams<T>& p) {
  const std::size_t n = e.rows();
  const auto alpha = forward_table(e, p);
  const auto beta = backward_table(e, p);
  CrfMarginals<T> m;
  m.log_z = log_z_from(alpha, p, n);
  m.unary = Tensor<T>(Shape{n, Y});
  m.pairwise = Tensor<T>(Shape{Y, Y});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t y = 0; y < Y; ++y) {
      m.unary.at(t, y) = std::exp(alpha[t * Y + y] + beta[t * Y + y] - m.log_z);
    }
  }
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t a = 0; a < Y; ++a) {
      for (std::size_t b = 0; b < Y; ++b) {
        m.pairwise.at(a, b) += std::exp(alpha[(t - 1) * Y + a] + p.trans[a * Y + b] + e.at(t, b) +
                                        beta[t * Y + b] - m.log_z);
      }
    }
  }
  return m;
}

template <typename T>
CrfParams<T> view_params(const Tensor<T>& trans, const Tensor<T>& start, const Tensor<T>& end) {
  CrfParams<T> p;
  p.trans = trans;
  p.start = start;
  p.end = end;
  return p;
}

// Inputs: emissions (T x 2), trans (2 x 2), start (2), end (2).
template <typename T>
class CrfNllOp final : public CustomOp<T> {
 public:
  explicit CrfNllOp(std::vector<int> gold) : gold_(std::move(gold)) {}

  std::string_view name() const override { return "crf_nll"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) const override {
    const CrfParams<T> p = view_params(*in[1], *in[2], *in[3]);
    check_lattice(*in[0], p);
    check_gold<T>(gold_, in[0]->rows());
    const auto alpha = forward_table(*in[0], p);
    const T log_z = log_z_from(alpha, p, in[0]->rows());
    return Tensor<T>::scalar(log_z - gold_score(*in[0], p, gold_));
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grads) const override {
    const T g = grad_out[0];
    const CrfParams<T> p = view_params(*in[1], *in[2], *in[3]);
    const auto m = compute_marginals(*in[0], p);
    const std::size_t n = in[0]->rows();
    if (grads[0]) {
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t y = 0; y < Y; ++y) {
          const T indicator = static_cast<std::size_t>(gold_[t]) == y ? T(1) : T(0);
          grads[0]->at(t, y) += g * (m.unary.at(t, y) - indicator);
        }
      }
    }
    if (grads[1]) {
      for (std::size_t a = 0; a < Y; ++a) {
        for (std::size_t b = 0; b < Y; ++b) (*grads[1])[a * Y + b] += g * m.pairwise.at(a, b);
      }
      for (std::size_t t = 1; t < n; ++t) (*grads[1])[gold_[t - 1] * Y + gold_[t]] -= g;
    }
    if (grads[2]) {
      for (std::size_t y = 0; y < Y; ++y) (*grads[2])[y] += g * m.unary.at(0, y);
      (*grads[2])[gold_[0]] -= g;
    }
    if (grads[3]) {
      for (std::size_t y = 0; y < Y; ++y) (*grads[3])[y] += g * m.unary.at(n - 1, y);
      (*grads[3])[gold_.back()] -= g;
    }
  }

 private:
  std::vector<int> gold_;
};

}  // namespace

template <typename T>
void CrfParams<T>::append_refs(std::vector<ParamRef<T>>& out) {
  out.push_back({"crf.bias", &bias, true});
  out.push_back({"crf.end", &end, true});
  out.push_back({"crf.proj", &proj, true});
  out.push_back({"crf.start", &start, true});
  out.push_back({"crf.trans", &trans, true});
}

template <typename T>
CrfParams<T> init_crf(std::size_t input_dim, std::mt19937_64& rng) {
  CrfParams<T> p;
  const double limit = std::sqrt(6.0 / static_cast<double>(input_dim + Y));
  std::uniform_real_distribution<double> dist(-limit, limit);
  p.proj = Tensor<T>(Shape{input_dim, Y});
  for (auto& v : p.proj.values()) v = static_cast<T>(dist(rng));
  return p;
}

template <typename T>
LatticeScores<T> emission_scores(const Tensor<T>& hidden, const CrfParams<T>& params) {
  const std::size_t n = hidden.rows(), d = hidden.cols();
  if (n == 0) throw ShapeError("emission_scores: empty sentence");
  if (params.proj.rows() != d || params.proj.cols() != Y || params.bias.size() != Y) {
    throw ShapeError("emission_scores: hidden " + shape_string(hidden.shape()) + " vs projection " +
                     shape_string(params.proj.shape()));
  }
  LatticeScores<T> s;
  s.emissions = Tensor<T>(Shape{n, Y});
  kernels::gemm(n, d, Y, hidden.data(), params.proj.data(), s.emissions.data(), false);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t y = 0; y < Y; ++y) s.emissions.at(t, y) += params.bias[y];
  }
  return s;
}

template <typename T>
T sequence_score(const LatticeScores<T>& scores, const CrfParams<T>& params, std::span<const int> labels) {
  check_lattice(scores.emissions, params);
  check_gold<T>(labels, scores.length());
  return gold_score(scores.emissions, params, labels);
}

template <typename T>
T log_partition(const LatticeScores<T>& scores, const CrfParams<T>& params) {
  check_lattice(scores.emissions, params);
  return log_z_from(forward_table(scores.emissions, params), params, scores.length());
}

template <typename T>
T nll(const LatticeScores<T>& scores, const CrfParams<T>& params, std::span<const int> gold) {
  check_lattice(scores.emissions, params);
  check_gold<T>(gold, scores.length());
  return log_partition(scores, params) - gold_score(scores.emissions, params, gold);
}

template <typename T>
CrfMarginals<T> marginals(const LatticeScores<T>& scores, const CrfParams<T>& params) {
  check_lattice(scores.emissions, params);
  return compute_marginals(scores.emissions, params);
}

template <typename T>
ViterbiResult<T> viterbi(const LatticeScores<T>& scores, const CrfParams<T>& params) {
  check_lattice(scores.emissions, params);
  const Tensor<T>& e = scores.emissions;
  const std::size_t n = e.rows();
  // best[t][y]: best score of positions t..n-1 given y_t = y, end score included.
  // Decoding then runs left to right, so ties resolve toward label 0 at the
  // earliest position where optimal paths differ.
  std::vector<T> best(n * Y);
  std::vector<T> tail(n * Y);  // best continuation after t, excluding emit[t][y]
  for (std::size_t y = 0; y < Y; ++y) {
    tail[(n - 1) * Y + y] = params.end[y];
    best[(n - 1) * Y + y] = e.at(n - 1, y) + params.end[y];
  }
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t y = 0; y < Y; ++y) {
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t next = 0; next < Y; ++next) {
        m = std::max(m, params.trans[y * Y + next] + best[(t + 1) * Y + next]);
      }
      tail[t * Y + y] = m;
      best[t * Y + y] = e.at(t, y) + m;
    }
  }
  ViterbiResult<T> r;
  r.labels.resize(n);
  T top = -std::numeric_limits<T>::infinity();
  for (std::size_t y = 0; y < Y; ++y) top = std::max(top, params.start[y] + best[y]);
  r.score = top;
  for (std::size_t y = 0; y < Y; ++y) {
    if (params.start[y] + best[y] == top) {
      r.labels[0] = static_cast<int>(y);
      break;
    }
  }
  for (std::size_t t = 1; t < n; ++t) {
    const std::size_t prev = static_cast<std::size_t>(r.labels[t - 1]);
    const T target = tail[(t - 1) * Y + prev];
    for (std::size_t y = 0; y < Y; ++y) {
      if (params.trans[prev * Y + y] + best[t * Y + y] == target) {
        r.labels[t] = static_cast<int>(y);
        break;
      }
    }
  }
  return r;
}

template <typename T>
std::vector<std::pair<std::vector<int>, T>> brute_force_distribution(const LatticeScores<T>& scores,
                                                                     const CrfParams<T>& params) {
  check_lattice(scores.emissions, params);
  const std::size_t n = scores.length();
  if (n > kBruteForceMaxLength) {
    throw ContractError("brute_force_distribution: length " + std::to_string(n) +
                        " exceeds the guard of " + std::to_string(kBruteForceMaxLength));
  }
  const std::size_t count = std::size_t(1) << n;
  std::vector<std::pair<std::vector<int>, T>> out(count);
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t code = 0; code < count; ++code) {
    std::vector<int> y(n);
    for (std::size_t t = 0; t < n; ++t) y[t] = static_cast<int>((code >> (n - 1 - t)) & 1u);
    // Direct product of potentials, in log space.
    T s = params.start[y[0]] + params.end[y[n - 1]];
    for (std::size_t t = 0; t < n; ++t) {
      s += scores.emissions.at(t, y[t]);
      if (t) s += params.trans[y[t - 1] * Y + y[t]];
    }
    mx = std::max(mx, s);
    out[code] = {std::move(y), s};
  }
  T total = T(0);
  for (auto& [y, s] : out) {
    s = std::exp(s - mx);
    total += s;
  }
  for (auto& [y, s] : out) s /= total;
  return out;
}

template <typename T>
Var<T> crf_nll(ParamBinder<T>& bind, Var<T> emissions, const CrfParams<T>& params, std::vector<int> gold) {
  auto op = std::make_shared<const CrfNllOp<T>>(std::move(gold));
  Var<T> inputs[4] = {emissions, bind(params.trans), bind(params.start), bind(params.end)};
  return ad::custom<T>(std::move(op), inputs);
}

#define EDUSEG_INSTANTIATE(T)                                                                    \
  template struct CrfParams<T>;                                                                  \
  template CrfParams<T> init_crf<T>(std::size_t, std::mt19937_64&);                              \
  template LatticeScores<T> emission_scores<T>(const Tensor<T>&, const CrfParams<T>&);           \
  template T sequence_score<T>(const LatticeScores<T>&, const CrfParams<T>&, std::span<const int>); \
  template T log_partition<T>(const LatticeScores<T>&, const CrfParams<T>&);                     \
  template T nll<T>(const LatticeScores<T>&, const CrfParams<T>&, std::span<const int>);         \
  template CrfMarginals<T> marginals<T>(const LatticeScores<T>&, const CrfParams<T>&);           \
  template ViterbiResult<T> viterbi<T>(const LatticeScores<T>&, const CrfParams<T>&);            \
  template std::vector<std::pair<std::vector<int>, T>> brute_force_distribution<T>(              \
      const LatticeScores<T>&, const CrfParams<T>&);                                             \
  template Var<T> crf_nll<T>(ParamBinder<T>&, Var<T>, const CrfParams<T>&, std::vector<int>);

EDUSEG_INSTANTIATE(float)
EDUSEG_INSTANTIATE(double)

#undef EDUSEG_INSTANTIATE

}  // namespace eduseg
