#include "resa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "resa/parameters.hpp"

namespace resa {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

Graph& Tensor::graph() const {
  if (graph_ == nullptr) throw std::logic_error("tensor is not attached to a graph");
  return *graph_;
}

const Shape& Tensor::shape() const { return graph().shape(id_); }

std::span<const Scalar> Tensor::values() const { return graph().value(id_); }

Scalar Tensor::at(std::size_t r, std::size_t c) const {
  const Shape& s = shape();
  if (r >= s.rows || c >= s.cols) throw std::out_of_range("tensor index out of range");
  return values()[r * s.cols + c];
}

Scalar Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
  return values()[0];
}

std::vector<Scalar> Tensor::grad() const {
  Graph& g = graph();
  if (!g.has_grad(id_)) return std::vector<Scalar>(size(), 0);
  auto gr = g.grad(id_);
  return {gr.begin(), gr.end()};
}

Tensor Graph::constant(Shape shape, std::vector<Scalar> values) {
  if (values.size() != shape.size())
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " +
                     shape.str());
  return record("constant", shape, std::move(values), {}, {});
}

Tensor Graph::constant(Shape shape, Scalar fill) {
  return record("constant", shape, std::vector<Scalar>(shape.size(), fill), {}, {});
}

Tensor Graph::param(Parameter& p) {
  Tensor t = record("param", p.shape, p.value, {}, {});
  nodes_.back().param = &p;
  return t;
}

Tensor Graph::record(std::string_view kind, Shape shape, std::vector<Scalar> value,
                     std::vector<std::size_t> inputs, BackwardFn backward) {
  for (std::size_t in : inputs)
    if (in >= nodes_.size()) throw std::logic_error("record: input recorded after consumer");
  nodes_.push_back(Node{kind, shape, std::move(value), {}, std::move(inputs), std::move(backward),
                        nullptr});
  return Tensor(this, nodes_.size() - 1);
}

std::span<Scalar> Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0);
  return n.grad;
}

void Graph::backward(const Tensor& loss) {
  if (&loss.graph() != this) throw std::logic_error("backward: loss belongs to another graph");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
  for (Node& n : nodes_) n.grad.clear();
  grad_buffer(loss.id())[0] = 1;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto& dst = n.param->grad;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

void check_same_graph(const Tensor& a, const Tensor& b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("tensors belong to different graphs");
}

namespace {

std::size_t bdim(std::size_t a, std::size_t b, std::string_view op, const Shape& sa,
                 const Shape& sb) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + sa.str() + " with " + sb.str());
}

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, std::string_view name) {
  check_same_graph(a, b);
  Graph& g = a.graph();
  const Shape sa = a.shape(), sb = b.shape();
  const Shape out{bdim(sa.rows, sb.rows, name, sa, sb), bdim(sa.cols, sb.cols, name, sa, sb)};
  auto va = a.values();
  auto vb = b.values();
  std::vector<Scalar> v(out.size());
  for (std::size_t r = 0; r < out.rows; ++r) {
    const std::size_t ra = sa.rows == 1 ? 0 : r, rb = sb.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < out.cols; ++c) {
      const Scalar x = va[ra * sa.cols + (sa.cols == 1 ? 0 : c)];
      const Scalar y = vb[rb * sb.cols + (sb.cols == 1 ? 0 : c)];
      v[r * out.cols + c] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(name, out, std::move(v), {ia, ib}, [ia, ib, sa, sb, out, kind](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto va = g.value(ia);
    auto vb = g.value(ib);
    auto ga = g.grad_buffer(ia);
    auto gb = g.grad_buffer(ib);
    for (std::size_t r = 0; r < out.rows; ++r) {
      const std::size_t ra = sa.rows == 1 ? 0 : r, rb = sb.rows == 1 ? 0 : r;
      for (std::size_t c = 0; c < out.cols; ++c) {
        const std::size_t ka = ra * sa.cols + (sa.cols == 1 ? 0 : c);
        const std::size_t kb = rb * sb.cols + (sb.cols == 1 ? 0 : c);
        const Scalar d = go[r * out.cols + c];
        switch (kind) {
          case Binary::kAdd: ga[ka] += d; gb[kb] += d; break;
          case Binary::kSub: ga[ka] += d; gb[kb] -= d; break;
          case Binary::kMul: ga[ka] += d * vb[kb]; gb[kb] += d * va[ka]; break;
        }
      }
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, std::string_view name, Fwd fwd, Deriv deriv) {
  Graph& g = a.graph();
  auto va = a.values();
  std::vector<Scalar> v(va.size());
  for (std::size_t k = 0; k < va.size(); ++k) v[k] = fwd(va[k]);
  const std::size_t ia = a.id();
  // deriv(input, output) -> d output / d input
  return g.record(name, a.shape(), std::move(v), {ia}, [ia, deriv](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto vo = g.value(self);
    auto vi = g.value(ia);
    auto gi = g.grad_buffer(ia);
    for (std::size_t k = 0; k < go.size(); ++k) gi[k] += go[k] * deriv(vi[k], vo[k]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_graph(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) throw ShapeError("matmul: inner extents differ, " + sa.str() + " x " + sb.str());
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  auto va = a.values();
  auto vb = b.values();
  std::vector<Scalar> v(m * n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar x = va[i * k + p];
      const Scalar* brow = &vb[p * n];
      Scalar* orow = &v[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul", {m, n}, std::move(v), {ia, ib}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto va = g.value(ia);
    auto vb = g.value(ib);
    auto ga = g.grad_buffer(ia);
    auto gb = g.grad_buffer(ib);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        Scalar acc = 0;
        const Scalar* brow = &vb[p * n];
        const Scalar* grow = &go[i * n];
        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga[i * k + p] += acc;
        const Scalar x = va[i * k + p];
        Scalar* gbrow = &gb[p * n];
        for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
      }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& w) {
  check_same_graph(a, w);
  const Shape sa = a.shape(), sw = w.shape();
  if (sa.cols != sw.cols)
    throw ShapeError("matmul_nt: input width differs, " + sa.str() + " x " + sw.str() + "^T");
  const std::size_t m = sa.rows, k = sa.cols, n = sw.rows;
  auto va = a.values();
  auto vw = w.values();
  std::vector<Scalar> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Scalar acc = 0;
      const Scalar* arow = &va[i * k];
      const Scalar* wrow = &vw[j * k];
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * wrow[p];
      v[i * n + j] = acc;
    }
  const std::size_t ia = a.id(), iw = w.id();
  return a.graph().record("matmul_nt", {m, n}, std::move(v), {ia, iw}, [ia, iw, m, k, n](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto va = g.value(ia);
    auto vw = g.value(iw);
    auto ga = g.grad_buffer(ia);
    auto gw = g.grad_buffer(iw);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const Scalar d = go[i * n + j];
        if (d == 0) continue;
        const Scalar* arow = &va[i * k];
        const Scalar* wrow = &vw[j * k];
        Scalar* garow = &ga[i * k];
        Scalar* gwrow = &gw[j * k];
        for (std::size_t p = 0; p < k; ++p) {
          garow[p] += d * wrow[p];
          gwrow[p] += d * arow[p];
        }
      }
  });
}

Tensor scale(const Tensor& a, Scalar s) {
  return unary(a, "scale", [s](Scalar x) { return s * x; }, [s](Scalar, Scalar) { return s; });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_same_graph(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.rows != sb.rows)
    throw ShapeError("concat_cols: row counts differ, " + sa.str() + " and " + sb.str());
  const Shape out{sa.rows, sa.cols + sb.cols};
  auto va = a.values();
  auto vb = b.values();
  std::vector<Scalar> v;
  v.reserve(out.size());
  for (std::size_t r = 0; r < sa.rows; ++r) {
    v.insert(v.end(), va.begin() + r * sa.cols, va.begin() + (r + 1) * sa.cols);
    v.insert(v.end(), vb.begin() + r * sb.cols, vb.begin() + (r + 1) * sb.cols);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("concat_cols", out, std::move(v), {ia, ib}, [ia, ib, sa, sb, out](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto ga = g.grad_buffer(ia);
    auto gb = g.grad_buffer(ib);
    for (std::size_t r = 0; r < out.rows; ++r) {
      for (std::size_t c = 0; c < sa.cols; ++c) ga[r * sa.cols + c] += go[r * out.cols + c];
      for (std::size_t c = 0; c < sb.cols; ++c) gb[r * sb.cols + c] += go[r * out.cols + sa.cols + c];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Scalar> v;
  for (const Tensor& t : parts) {
    check_same_graph(parts[0], t);
    if (t.cols() != cols)
      throw ShapeError("concat_rows: column counts differ, " + parts[0].shape().str() + " and " +
                       t.shape().str());
    rows += t.rows();
    ids.push_back(t.id());
    auto tv = t.values();
    v.insert(v.end(), tv.begin(), tv.end());
  }
  auto inputs = ids;
  return parts[0].graph().record("concat_rows", {rows, cols}, std::move(v), std::move(inputs),
                                 [ids](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      auto gi = g.grad_buffer(id);
      for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += go[offset + k];
      offset += gi.size();
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const Shape sa = a.shape();
  if (begin + count > sa.rows)
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + sa.str());
  auto va = a.values();
  std::vector<Scalar> v(va.begin() + begin * sa.cols, va.begin() + (begin + count) * sa.cols);
  const std::size_t ia = a.id();
  return a.graph().record("slice_rows", {count, sa.cols}, std::move(v), {ia}, [ia, begin, sa](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    for (std::size_t k = 0; k < go.size(); ++k) gi[begin * sa.cols + k] += go[k];
  });
}

Tensor transpose(const Tensor& a) {
  const Shape sa = a.shape();
  auto va = a.values();
  std::vector<Scalar> v(sa.size());
  for (std::size_t r = 0; r < sa.rows; ++r)
    for (std::size_t c = 0; c < sa.cols; ++c) v[c * sa.rows + r] = va[r * sa.cols + c];
  const std::size_t ia = a.id();
  return a.graph().record("transpose", {sa.cols, sa.rows}, std::move(v), {ia}, [ia, sa](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    for (std::size_t r = 0; r < sa.rows; ++r)
      for (std::size_t c = 0; c < sa.cols; ++c) gi[r * sa.cols + c] += go[c * sa.rows + r];
  });
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  const Shape s = row.shape();
  if (s.rows != 1) throw ShapeError("broadcast_rows: expected a single row, got " + s.str());
  auto vr = row.values();
  std::vector<Scalar> v;
  v.reserve(n * s.cols);
  for (std::size_t r = 0; r < n; ++r) v.insert(v.end(), vr.begin(), vr.end());
  const std::size_t ia = row.id();
  return row.graph().record("broadcast_rows", {n, s.cols}, std::move(v), {ia}, [ia, n, s](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) gi[c] += go[r * s.cols + c];
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](Scalar x) {
        return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x))
                      : std::exp(x) / (Scalar(1) + std::exp(x));
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](Scalar x) { return std::tanh(x); },
               [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](Scalar x) { return x > 0 ? x : Scalar(0); },
               [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](Scalar x) { return std::log(x); },
               [](Scalar x, Scalar) { return Scalar(1) / x; });
}

Tensor abs(const Tensor& a) {
  return unary(a, "abs", [](Scalar x) { return std::abs(x); },
               [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : x < 0 ? Scalar(-1) : Scalar(0); });
}

Tensor clamp(const Tensor& a, Scalar lo, Scalar hi) {
  return unary(a, "clamp", [lo, hi](Scalar x) { return std::clamp(x, lo, hi); },
               [lo, hi](Scalar x, Scalar) { return x >= lo && x <= hi ? Scalar(1) : Scalar(0); });
}

Tensor sum(const Tensor& a) {
  Scalar s = 0;
  for (Scalar x : a.values()) s += x;
  const std::size_t ia = a.id();
  return a.graph().record("sum", {1, 1}, {s}, {ia}, [ia](Graph& g, std::size_t self) {
    const Scalar d = g.grad(self)[0];
    for (Scalar& x : g.grad_buffer(ia)) x += d;
  });
}

Tensor sum_rows(const Tensor& a) {
  const Shape sa = a.shape();
  auto va = a.values();
  std::vector<Scalar> v(sa.cols, 0);
  for (std::size_t r = 0; r < sa.rows; ++r)
    for (std::size_t c = 0; c < sa.cols; ++c) v[c] += va[r * sa.cols + c];
  const std::size_t ia = a.id();
  return a.graph().record("sum_rows", {1, sa.cols}, std::move(v), {ia}, [ia, sa](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    for (std::size_t r = 0; r < sa.rows; ++r)
      for (std::size_t c = 0; c < sa.cols; ++c) gi[r * sa.cols + c] += go[c];
  });
}

Tensor pick(const Tensor& a, std::size_t r, std::size_t c) {
  const Shape sa = a.shape();
  const Scalar v = a.at(r, c);
  const std::size_t ia = a.id(), k = r * sa.cols + c;
  return a.graph().record("pick", {1, 1}, {v}, {ia}, [ia, k](Graph& g, std::size_t self) {
    g.grad_buffer(ia)[k] += g.grad(self)[0];
  });
}

namespace {

void softmax_backward(std::span<const Scalar> p, std::span<const Scalar> go, std::span<Scalar> gi,
                      std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * cols;
    Scalar dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += p[o + c] * go[o + c];
    for (std::size_t c = 0; c < cols; ++c) gi[o + c] += p[o + c] * (go[o + c] - dot);
  }
}

}  // namespace

Tensor masked_softmax_rows(const Tensor& scores, std::span<const Scalar> mask) {
  const Shape s = scores.shape();
  if (s.cols == 0) throw ShapeError("masked_softmax_rows: empty row " + s.str());
  const bool row_mask = mask.size() == s.cols && s.rows != 1;
  if (mask.size() != s.size() && !row_mask)
    throw ShapeError("masked_softmax_rows: mask of " + std::to_string(mask.size()) +
                     " entries for scores " + s.str());
  auto vs = scores.values();
  std::vector<Scalar> p(s.size(), 0);
  std::vector<unsigned char> fallback(s.rows, 0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const std::size_t o = r * s.cols;
    const Scalar* m = row_mask ? mask.data() : mask.data() + o;
    Scalar mx = 0;
    bool any = false;
    for (std::size_t c = 0; c < s.cols; ++c) {
      if (is_masked(m[c])) continue;
      const Scalar a = vs[o + c] + m[c];
      if (!any || a > mx) mx = a;
      any = true;
    }
    if (!any) {
      fallback[r] = 1;
      std::fill(p.begin() + o, p.begin() + o + s.cols, Scalar(1) / Scalar(s.cols));
      continue;
    }
    Scalar z = 0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      if (is_masked(m[c])) continue;
      p[o + c] = std::exp(vs[o + c] + m[c] - mx);
      z += p[o + c];
    }
    for (std::size_t c = 0; c < s.cols; ++c) p[o + c] /= z;
  }
  const std::size_t ia = scores.id();
  return scores.graph().record("masked_softmax", s, std::move(p), {ia}, [ia, s, fallback](Graph& g, std::size_t self) {
    auto p = g.value(self);
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    // Fully masked rows are constant in the scores.
    for (std::size_t r = 0; r < s.rows; ++r) {
      if (fallback[r]) continue;
      const std::size_t o = r * s.cols;
      softmax_backward(p.subspan(o, s.cols), go.subspan(o, s.cols), gi.subspan(o, s.cols), 1, s.cols);
    }
  });
}

Tensor softmax_rows(const Tensor& scores) {
  const std::vector<Scalar> mask(scores.size(), 0);
  return masked_softmax_rows(scores, mask);
}

Tensor log_softmax_rows(const Tensor& scores) {
  const Shape s = scores.shape();
  auto vs = scores.values();
  std::vector<Scalar> v(s.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    const std::size_t o = r * s.cols;
    const Scalar mx = *std::max_element(vs.begin() + o, vs.begin() + o + s.cols);
    Scalar z = 0;
    for (std::size_t c = 0; c < s.cols; ++c) z += std::exp(vs[o + c] - mx);
    const Scalar lz = mx + std::log(z);
    for (std::size_t c = 0; c < s.cols; ++c) v[o + c] = vs[o + c] - lz;
  }
  const std::size_t ia = scores.id();
  return scores.graph().record("log_softmax", s, std::move(v), {ia}, [ia, s](Graph& g, std::size_t self) {
    auto lp = g.value(self);
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t o = r * s.cols;
      Scalar total = 0;
      for (std::size_t c = 0; c < s.cols; ++c) total += go[o + c];
      for (std::size_t c = 0; c < s.cols; ++c) gi[o + c] += go[o + c] - std::exp(lp[o + c]) * total;
    }
  });
}

Tensor mean_pool(const Tensor& seq, std::span<const unsigned char> length_mask) {
  const Shape s = seq.shape();
  if (length_mask.size() != s.rows)
    throw ShapeError("mean_pool: length mask of " + std::to_string(length_mask.size()) +
                     " for sequence " + s.str());
  std::size_t count = 0;
  for (unsigned char m : length_mask) count += m != 0;
  if (count == 0) throw std::invalid_argument("mean_pool: every position is masked");
  auto vs = seq.values();
  std::vector<Scalar> v(s.cols, 0);
  const Scalar inv = Scalar(1) / Scalar(count);
  for (std::size_t r = 0; r < s.rows; ++r)
    if (length_mask[r])
      for (std::size_t c = 0; c < s.cols; ++c) v[c] += vs[r * s.cols + c] * inv;
  const std::size_t ia = seq.id();
  std::vector<unsigned char> keep(length_mask.begin(), length_mask.end());
  return seq.graph().record("mean_pool", {1, s.cols}, std::move(v), {ia}, [ia, s, inv, keep](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto gi = g.grad_buffer(ia);
    for (std::size_t r = 0; r < s.rows; ++r)
      if (keep[r])
        for (std::size_t c = 0; c < s.cols; ++c) gi[r * s.cols + c] += go[c] * inv;
  });
}

Tensor gather_rows(Graph& g, Parameter& table, std::span<const std::size_t> rows) {
  const std::size_t d = table.shape.cols;
  std::vector<Scalar> v;
  v.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    if (r >= table.shape.rows)
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside " + table.name);
    v.insert(v.end(), table.value.begin() + r * d, table.value.begin() + (r + 1) * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Parameter* p = &table;
  return g.record("gather_rows", {rows.size(), d}, std::move(v), {}, [p, idx, d](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t c = 0; c < d; ++c) p->grad[idx[k] * d + c] += go[k * d + c];
  });
}

}  // namespace resa
