#pragma once

// Symbolic rewriting engine for first-order noncommutative differential
// forms. A form is a sum of words graded by {order-zero, dt, dW}; products
// are reduced exhaustively by the quadratic-variation rules
//
//   (A dt)(B dt) = 0,   (A dt)(B dW C) = 0,   (A dW B)(C dt) = 0,
//   (A dW B)(C dW D) = phi(B C) A D dt,
//
// with exact rational coefficients and phi-moments kept as opaque commuting
// atoms keyed by the canonical form of their operator word (traciality:
// cyclic rotations unify; declared commutation unifies adjacent swaps).
//
// Symbol declarations:
//   - commuting pairs: adjacent swap allowed in canonicalization
//   - central symbols: scalars; commute with everything (dW included) and
//     are pulled out of phi by linearity
//   - inverse pairs: adjacent x x^-1 cancels; commutation declarations
//     propagate to inverse partners

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

#include "freecir/errors.hpp"

namespace freecir::ito {

using Rational = boost::rational<long long>;

enum class Grade { ZERO, DT, DW };

inline const std::string kDW = "dW";  // sentinel inside a word's symbol sequence

// ---------------------------------------------------------------------------
// Symbol declarations

class RewriteContext {
 public:
  void declare_commuting(const std::string& a, const std::string& b) {
    for (const std::string& x : with_inverse(a))
      for (const std::string& y : with_inverse(b)) insert_pair(x, y);
  }

  /// Central = scalar multiple of the identity: commutes with every symbol
  /// and with dW, and phi(c w) = c phi(w) pulls it out of moments.
  void declare_central(const std::string& s) { central_.insert(s); }

  void declare_inverse(const std::string& a, const std::string& b) {
    if (a == b) throw Error("a symbol cannot be declared its own inverse");
    inverse_[a] = b;
    inverse_[b] = a;
    // x commutes with y iff x^-1 does; retrofit existing declarations.
    std::vector<std::pair<std::string, std::string>> existing(pairs_.begin(),
                                                              pairs_.end());
    for (const auto& [x, y] : existing) {
      if (x == a || x == b) insert_pair(x == a ? b : a, y);
      if (y == a || y == b) insert_pair(x, y == a ? b : a);
    }
  }

  bool is_central(const std::string& s) const { return central_.count(s) > 0; }

  const std::string* inverse_of(const std::string& s) const {
    auto it = inverse_.find(s);
    return it == inverse_.end() ? nullptr : &it->second;
  }

  /// May x and y be swapped when adjacent? dW commutes only with centrals.
  bool commutes(const std::string& x, const std::string& y) const {
    if (x == y) return true;
    if (is_central(x) || is_central(y)) return true;
    if (x == kDW || y == kDW) return false;
    return pairs_.count(ordered(x, y)) > 0;
  }

 private:
  static std::pair<std::string, std::string> ordered(const std::string& a,
                                                     const std::string& b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  }
  std::vector<std::string> with_inverse(const std::string& s) const {
    std::vector<std::string> out{s};
    if (const std::string* inv = inverse_of(s)) out.push_back(*inv);
    return out;
  }
  void insert_pair(const std::string& a, const std::string& b) {
    if (a != b) pairs_.insert(ordered(a, b));
  }

  std::set<std::pair<std::string, std::string>> pairs_;
  std::set<std::string> central_;
  std::map<std::string, std::string> inverse_;
};

// ---------------------------------------------------------------------------
// Words and forms

/// One product term: rational coefficient, commuting phi-moments (each the
/// canonical symbol sequence of its operator word), and the ordered symbol
/// sequence, which contains at most one dW sentinel. `is_dt` marks a dt
/// factor (dt itself is central, so it is a flag, not a sequence entry).
struct Word {
  Rational coeff{1};
  std::vector<std::vector<std::string>> moments;
  std::vector<std::string> seq;
  bool is_dt = false;

  Grade grade() const {
    if (is_dt) return Grade::DT;
    for (const auto& s : seq)
      if (s == kDW) return Grade::DW;
    return Grade::ZERO;
  }

  /// Merge key: everything but the coefficient.
  friend bool same_shape(const Word& a, const Word& b) {
    return a.is_dt == b.is_dt && a.seq == b.seq && a.moments == b.moments;
  }
  friend bool shape_less(const Word& a, const Word& b) {
    if (a.is_dt != b.is_dt) return a.is_dt < b.is_dt;
    if (a.seq != b.seq) return a.seq < b.seq;
    return a.moments < b.moments;
  }
};

struct DifferentialForm {
  std::vector<Word> order_zero;
  std::vector<Word> dt_part;
  std::vector<Word> dw_part;

  bool empty() const {
    return order_zero.empty() && dt_part.empty() && dw_part.empty();
  }
  std::vector<Word> all_words() const {
    std::vector<Word> out = order_zero;
    out.insert(out.end(), dt_part.begin(), dt_part.end());
    out.insert(out.end(), dw_part.begin(), dw_part.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Canonicalization

namespace detail {

/// Cancels adjacent inverse pairs in place; true if anything changed.
inline bool cancel_adjacent_inverses(std::vector<std::string>& seq,
                                     const RewriteContext& ctx) {
  bool changed = false;
  for (std::size_t i = 0; i + 1 < seq.size();) {
    const std::string* inv = ctx.inverse_of(seq[i]);
    if (inv && *inv == seq[i + 1]) {
      seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      changed = true;
      if (i > 0) --i;
    } else {
      ++i;
    }
  }
  return changed;
}

/// Lexicographically minimal representative of the trace-equivalence class
/// (adjacent swaps of commuting symbols). Greedy: the head of the minimal
/// word must be a symbol that commutes past everything before it; pick the
/// smallest such symbol, then recurse.
inline void trace_sort(std::vector<std::string>& seq, const RewriteContext& ctx) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  std::vector<std::string> rest = seq;
  while (!rest.empty()) {
    std::size_t best = 0;
    bool have = false;
    for (std::size_t i = 0; i < rest.size(); ++i) {
      bool movable = true;
      for (std::size_t j = 0; j < i; ++j)
        if (!ctx.commutes(rest[i], rest[j])) {
          movable = false;
          break;
        }
      if (movable && (!have || rest[i] < rest[best])) {
        best = i;
        have = true;
      }
    }
    out.push_back(rest[best]);
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(best));
  }
  seq = std::move(out);
}

/// Canonical sequence: alternate cancellation and trace-sorting to fixpoint.
inline void canonicalize_sequence(std::vector<std::string>& seq,
                                  const RewriteContext& ctx) {
  for (;;) {
    cancel_adjacent_inverses(seq, ctx);
    trace_sort(seq, ctx);
    if (!cancel_adjacent_inverses(seq, ctx)) return;
  }
}

/// Canonical key of phi(word): centrals extracted (returned separately),
/// then the lexicographic minimum over the closure of cyclic rotations,
/// commuting swaps, and inverse cancellations; shorter words compare first.
/// Empty result means phi(1) = 1.
inline std::pair<std::vector<std::string>, std::vector<std::string>>
canonical_moment(std::vector<std::string> word, const RewriteContext& ctx) {
  std::vector<std::string> extracted;
  word.erase(std::remove_if(word.begin(), word.end(),
                            [&](const std::string& s) {
                              if (ctx.is_central(s)) {
                                extracted.push_back(s);
                                return true;
                              }
                              return false;
                            }),
             word.end());
  if (word.empty()) return {extracted, {}};

  auto less_word = [](const std::vector<std::string>& a,
                      const std::vector<std::string>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  };

  std::set<std::vector<std::string>> seen;
  std::vector<std::vector<std::string>> queue{word};
  seen.insert(word);
  std::vector<std::string> best = word;
  const std::size_t cap = 50000;
  while (!queue.empty()) {
    std::vector<std::string> w = std::move(queue.back());
    queue.pop_back();
    if (less_word(w, best)) best = w;
    auto push = [&](std::vector<std::string> v) {
      if (seen.size() < cap && seen.insert(v).second) queue.push_back(std::move(v));
    };
    if (!w.empty()) {  // cyclic rotation (traciality)
      std::vector<std::string> rot(w.begin() + 1, w.end());
      rot.push_back(w.front());
      push(std::move(rot));
    }
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      if (ctx.commutes(w[i], w[i + 1])) {
        std::vector<std::string> sw = w;
        std::swap(sw[i], sw[i + 1]);
        push(std::move(sw));
      }
      const std::string* inv = ctx.inverse_of(w[i]);
      if (inv && *inv == w[i + 1]) {
        std::vector<std::string> red = w;
        red.erase(red.begin() + static_cast<std::ptrdiff_t>(i), red.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        push(std::move(red));
      }
    }
    // wrap-around inverse cancellation via traciality: phi(x w x^-1) = phi(w)
    if (w.size() >= 2) {
      const std::string* inv = ctx.inverse_of(w.back());
      if (inv && *inv == w.front()) {
        std::vector<std::string> red(w.begin() + 1, w.end() - 1);
        push(std::move(red));
      }
    }
  }
  return {extracted, best};
}

inline void normalize_word(Word& w, const RewriteContext& ctx) {
  // Re-canonicalize moments (they may carry centrals or new content after
  // multiplication or reversal).
  std::vector<std::vector<std::string>> moments;
  std::vector<std::string> extracted_all;
  for (auto& m : w.moments) {
    auto [extracted, key] = canonical_moment(std::move(m), ctx);
    extracted_all.insert(extracted_all.end(), extracted.begin(), extracted.end());
    if (!key.empty()) moments.push_back(std::move(key));
  }
  std::sort(moments.begin(), moments.end());
  w.moments = std::move(moments);
  w.seq.insert(w.seq.end(), extracted_all.begin(), extracted_all.end());
  canonicalize_sequence(w.seq, ctx);
}

inline void merge_sorted(std::vector<Word>& words) {
  std::sort(words.begin(), words.end(),
            [](const Word& a, const Word& b) { return shape_less(a, b); });
  std::vector<Word> out;
  for (Word& w : words) {
    if (w.coeff == Rational(0)) continue;
    if (!out.empty() && same_shape(out.back(), w))
      out.back().coeff += w.coeff;
    else
      out.push_back(std::move(w));
  }
  out.erase(std::remove_if(out.begin(), out.end(),
                           [](const Word& w) { return w.coeff == Rational(0); }),
            out.end());
  words = std::move(out);
}

inline int dw_count(const std::vector<std::string>& seq) {
  int c = 0;
  for (const auto& s : seq) c += (s == kDW);
  return c;
}

}  // namespace detail

/// Normalizes every word and buckets by grade, merging equal shapes.
inline DifferentialForm normalize(const DifferentialForm& form,
                                  const RewriteContext& ctx = {}) {
  std::vector<Word> words = form.all_words();
  for (Word& w : words) detail::normalize_word(w, ctx);
  detail::merge_sorted(words);
  DifferentialForm out;
  for (Word& w : words) {
    switch (w.grade()) {
      case Grade::ZERO: out.order_zero.push_back(std::move(w)); break;
      case Grade::DT: out.dt_part.push_back(std::move(w)); break;
      case Grade::DW: out.dw_part.push_back(std::move(w)); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Arithmetic

inline DifferentialForm add_forms(const DifferentialForm& a,
                                  const DifferentialForm& b,
                                  const RewriteContext& ctx = {}) {
  DifferentialForm sum;
  sum.order_zero = a.all_words();
  std::vector<Word> bw = b.all_words();
  sum.order_zero.insert(sum.order_zero.end(), bw.begin(), bw.end());
  return normalize(sum, ctx);
}

inline DifferentialForm scale_form(const DifferentialForm& a, const Rational& c,
                                   const RewriteContext& ctx = {}) {
  DifferentialForm out;
  out.order_zero = a.all_words();
  for (Word& w : out.order_zero) w.coeff *= c;
  return normalize(out, ctx);
}

namespace detail {

/// Product of two words under the grading rules; nullopt when the product
/// vanishes (dt dt, dt dW, dW dt).
inline std::optional<Word> multiply_words(const Word& a, const Word& b,
                                          const RewriteContext& ctx) {
  const Grade ga = a.grade(), gb = b.grade();
  const bool a_diff = ga != Grade::ZERO, b_diff = gb != Grade::ZERO;
  Word out;
  out.coeff = a.coeff * b.coeff;
  out.moments = a.moments;
  out.moments.insert(out.moments.end(), b.moments.begin(), b.moments.end());

  if (a_diff && b_diff) {
    if (ga == Grade::DW && gb == Grade::DW) {
      // (A dW B)(C dW D) = phi(B C) A D dt
      const auto mid_a = std::find(a.seq.begin(), a.seq.end(), kDW);
      const auto mid_b = std::find(b.seq.begin(), b.seq.end(), kDW);
      std::vector<std::string> inner(mid_a + 1, a.seq.end());  // B
      inner.insert(inner.end(), b.seq.begin(), mid_b);         // C
      out.moments.emplace_back(std::move(inner));
      out.seq.assign(a.seq.begin(), mid_a);                    // A
      out.seq.insert(out.seq.end(), mid_b + 1, b.seq.end());   // D
      out.is_dt = true;
      return out;
    }
    return std::nullopt;  // dt dt, dt dW, dW dt all vanish
  }

  out.seq = a.seq;
  out.seq.insert(out.seq.end(), b.seq.begin(), b.seq.end());
  out.is_dt = a.is_dt || b.is_dt;
  if (dw_count(out.seq) > 1 || (out.is_dt && dw_count(out.seq) > 0))
    throw GradingError("internal: ungraded product word");
  return out;
}

}  // namespace detail

inline DifferentialForm multiply_forms(const DifferentialForm& a,
                                       const DifferentialForm& b,
                                       const RewriteContext& ctx = {}) {
  DifferentialForm raw;
  for (const Word& wa : a.all_words())
    for (const Word& wb : b.all_words())
      if (auto w = detail::multiply_words(wa, wb, ctx)) raw.order_zero.push_back(std::move(*w));
  return normalize(raw, ctx);
}

// ---------------------------------------------------------------------------
// Ito differential of a polynomial in the process symbol

/// d(X) = dx; d(X^2) = X dx + dx X + dx dx (quadratic variation contracted).
/// Degrees above 2 are not supported: every derivation this engine exists
/// for is quadratic.
inline DifferentialForm ito_differential(int degree, const std::string& symbol,
                                         const DifferentialForm& dx,
                                         const RewriteContext& ctx = {}) {
  if (degree < 1 || degree > 2)
    throw UnsupportedPolynomial("polynomial degree " + std::to_string(degree) +
                                " not supported (degree <= 2)");
  if (degree == 1) return normalize(dx, ctx);
  Word xw;
  xw.seq = {symbol};
  DifferentialForm x;
  x.order_zero.push_back(xw);
  DifferentialForm left = multiply_forms(x, dx, ctx);
  DifferentialForm right = multiply_forms(dx, x, ctx);
  DifferentialForm quad = multiply_forms(dx, dx, ctx);
  return add_forms(add_forms(left, right, ctx), quad, ctx);
}

// ---------------------------------------------------------------------------
// Equality with witness

struct EqualityResult {
  bool equal = true;
  DifferentialForm difference;  // lhs - rhs, normalized; empty iff equal
};

inline EqualityResult forms_equal(const DifferentialForm& lhs,
                                  const DifferentialForm& rhs,
                                  const RewriteContext& ctx = {}) {
  EqualityResult r;
  r.difference = add_forms(lhs, scale_form(rhs, Rational(-1), ctx), ctx);
  r.equal = r.difference.empty();
  return r;
}

/// Reversal anti-automorphism: word order reversed (phi keys re-canonicalize
/// themselves; traciality makes phi reversal-stable for the audit's use).
inline DifferentialForm reverse_form(const DifferentialForm& form,
                                     const RewriteContext& ctx = {}) {
  DifferentialForm out;
  for (Word w : form.all_words()) {
    std::reverse(w.seq.begin(), w.seq.end());
    for (auto& m : w.moments) std::reverse(m.begin(), m.end());
    out.order_zero.push_back(std::move(w));
  }
  return normalize(out, ctx);
}

// ---------------------------------------------------------------------------
// Parser
//
// form   := ['-'] term (('+'|'-') term)*
// term   := factor (('*' factor) | ('/' factor) | ('^' nat))*
//           ('/' rhs must reduce to a pure nonzero rational)
// factor := nat | 'dt' | 'dW' | identifier | 'phi' '(' form ')'
//         | 'sqrt' '(' identifier ')' | 'root4' '(' identifier ')'
//         | '(' form ')'

namespace detail {

class Parser {
 public:
  Parser(std::string text, const RewriteContext& ctx)
      : text_(std::move(text)), ctx_(ctx) {}

  DifferentialForm parse() {
    DifferentialForm f = parse_form();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return normalize(f, ctx_);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw SyntaxError(pos_, msg);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  DifferentialForm parse_form() {
    DifferentialForm acc;
    bool negative = eat('-');
    for (;;) {
      DifferentialForm term = parse_term();
      if (negative) term = scale_form(term, Rational(-1), ctx_);
      acc = add_forms(acc, term, ctx_);
      if (eat('+'))
        negative = false;
      else if (eat('-'))
        negative = true;
      else
        break;
    }
    return acc;
  }

  DifferentialForm parse_term() {
    DifferentialForm acc = parse_power();
    for (;;) {
      if (eat('*')) {
        acc = multiply_forms(acc, parse_power(), ctx_);
      } else if (eat('/')) {
        const std::size_t at = pos_;
        DifferentialForm rhs = parse_power();
        Rational value;
        if (!pure_rational(rhs, value) || value == Rational(0)) {
          pos_ = at;
          fail("divisor must be a nonzero rational");
        }
        acc = scale_form(acc, Rational(1) / value, ctx_);
      } else {
        break;
      }
    }
    return acc;
  }

  // '^' binds tighter than '*' and '/': b*V^2 is b*(V^2).
  DifferentialForm parse_power() {
    DifferentialForm base = parse_factor();
    while (eat('^')) {
      const std::size_t at = pos_;
      skip_ws();
      if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        pos_ = at;
        fail("exponent must be a nonnegative integer");
      }
      long long n = parse_nat();
      DifferentialForm pow;
      pow.order_zero.push_back(Word{});  // 1
      for (long long i = 0; i < n; ++i) pow = multiply_forms(pow, base, ctx_);
      base = pow;
    }
    return base;
  }

  static bool pure_rational(const DifferentialForm& f, Rational& value) {
    if (!f.dt_part.empty() || !f.dw_part.empty()) return false;
    if (f.order_zero.empty()) {
      value = Rational(0);
      return true;
    }
    if (f.order_zero.size() != 1) return false;
    const Word& w = f.order_zero.front();
    if (!w.seq.empty() || !w.moments.empty()) return false;
    value = w.coeff;
    return true;
  }

  long long parse_nat() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
    if (pos_ == start) fail("expected a number");
    try {
      return std::stoll(text_.substr(start, pos_ - start));
    } catch (const std::exception&) {
      pos_ = start;
      fail("integer literal out of range");
    }
  }

  std::string parse_identifier() {
    skip_ws();
    const std::size_t start = pos_;
    if (pos_ >= text_.size() ||
        !(std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      fail("expected an identifier");
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    return text_.substr(start, pos_ - start);
  }

  static DifferentialForm atom_form(std::string name) {
    Word w;
    w.seq.push_back(std::move(name));
    DifferentialForm f;
    f.order_zero.push_back(std::move(w));
    return f;
  }

  DifferentialForm parse_factor() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      Word w;
      w.coeff = Rational(parse_nat());
      DifferentialForm f;
      f.order_zero.push_back(std::move(w));
      return f;
    }
    if (c == '(') {
      ++pos_;
      DifferentialForm f = parse_form();
      if (!eat(')')) fail("expected ')'");
      return f;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t at = pos_;
      std::string name = parse_identifier();
      if (name == "dt") {
        Word w;
        w.is_dt = true;
        DifferentialForm f;
        f.dt_part.push_back(std::move(w));
        return f;
      }
      if (name == "dW") return atom_form(kDW);
      if (name == "phi") {
        if (!eat('(')) fail("expected '(' after phi");
        const std::size_t arg_at = pos_;
        DifferentialForm arg = parse_form();
        if (!eat(')')) fail("expected ')'");
        if (!arg.dt_part.empty() || !arg.dw_part.empty()) {
          pos_ = arg_at;
          throw GradingError("phi applied to a differential (dt/dW) argument");
        }
        DifferentialForm out;
        for (const Word& w : arg.order_zero) {
          Word m;
          m.coeff = w.coeff;
          m.moments = w.moments;  // nested phi stays folded: phi(c phi(u) v) = c phi(u) phi(v)
          m.moments.emplace_back(w.seq);
          out.order_zero.push_back(std::move(m));
        }
        if (arg.order_zero.empty()) {
          Word zero;
          zero.coeff = Rational(0);
          out.order_zero.push_back(zero);
        }
        return out;
      }
      if (name == "sqrt" || name == "root4") {
        if (!eat('(')) fail("expected '(' after " + name);
        std::string id = parse_identifier();
        if (!eat(')')) fail("expected ')'");
        return atom_form(name + "(" + id + ")");
      }
      (void)at;
      return atom_form(std::move(name));
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  std::string text_;
  const RewriteContext& ctx_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline DifferentialForm parse_expression(const std::string& text,
                                         const RewriteContext& ctx = {}) {
  return detail::Parser(text, ctx).parse();
}

// ---------------------------------------------------------------------------
// Printer (same grammar; output re-parses to an equal form)

namespace detail {

inline std::string rational_to_string(const Rational& r) {
  std::string s = std::to_string(r.numerator());
  if (r.denominator() != 1) s += "/" + std::to_string(r.denominator());
  return s;
}

/// Symbol sequence with runs compressed: a*a*b -> a^2*b.
inline std::string sequence_to_string(const std::vector<std::string>& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size();) {
    std::size_t j = i;
    while (j < seq.size() && seq[j] == seq[i]) ++j;
    if (!out.empty()) out += "*";
    out += seq[i];
    if (j - i > 1) out += "^" + std::to_string(j - i);
    i = j;
  }
  return out;
}

inline std::string word_to_string(const Word& w) {
  const Rational mag = w.coeff >= Rational(0) ? w.coeff : -w.coeff;
  std::vector<std::string> pieces;
  for (const auto& m : w.moments) pieces.push_back("phi(" + sequence_to_string(m) + ")");
  if (!w.seq.empty()) pieces.push_back(sequence_to_string(w.seq));
  if (w.is_dt) pieces.push_back("dt");
  std::string body;
  for (const auto& p : pieces) {
    if (!body.empty()) body += "*";
    body += p;
  }
  if (body.empty()) return rational_to_string(mag);
  if (mag == Rational(1)) return body;
  return rational_to_string(mag) + "*" + body;
}

}  // namespace detail

inline std::string to_string(const DifferentialForm& form) {
  std::vector<const Word*> order;
  for (const Word& w : form.order_zero) order.push_back(&w);
  for (const Word& w : form.dt_part) order.push_back(&w);
  for (const Word& w : form.dw_part) order.push_back(&w);
  if (order.empty()) return "0";
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Word& w = *order[i];
    const bool neg = w.coeff < Rational(0);
    if (i == 0)
      out += neg ? "-" : "";
    else
      out += neg ? " - " : " + ";
    out += detail::word_to_string(w);
  }
  return out;
}

}  // namespace freecir::ito
