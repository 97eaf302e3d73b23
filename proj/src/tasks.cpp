#include "softstack/tasks.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace softstack::tasks {

namespace {

const std::vector<std::string> kAB = {"a", "b"};
const std::vector<std::string> kDigits5 = {"0", "1", "2", "3", "4"};
const std::vector<std::string> kBits = {"0", "1"};
const std::vector<std::string> kBool = {"True", "False"};

std::string pick(const std::vector<std::string>& alphabet, Rng& rng) {
    return alphabet[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(alphabet.size()) - 1))];
}

std::vector<std::string> random_string(const std::vector<std::string>& alphabet, int n, Rng& rng) {
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(pick(alphabet, rng));
    return out;
}

int mod5(long long v) { return static_cast<int>(((v % 5) + 5) % 5); }

// ---------------------------------------------------------------------------
// Limb-based big unsigned integers; the independent arithmetic route for the
// binary tasks (the generators work directly on digit characters).
// ---------------------------------------------------------------------------
struct BigUint {
    std::vector<uint32_t> limbs;  // little-endian, normalized (no high zero limbs)

    static BigUint from_bits(const std::vector<std::string>& bits, size_t begin, size_t end) {
        BigUint x;
        for (size_t i = begin; i < end; ++i) {
            x.shl1();
            if (bits[i] == "1") x.add_small(1);
        }
        return x;
    }

    bool is_zero() const { return limbs.empty(); }

    void normalize() {
        while (!limbs.empty() && limbs.back() == 0) limbs.pop_back();
    }

    void shl1() {
        uint32_t carry = 0;
        for (auto& l : limbs) {
            const uint32_t next = l >> 31;
            l = (l << 1) | carry;
            carry = next;
        }
        if (carry) limbs.push_back(carry);
    }

    void div2() {
        uint32_t carry = 0;
        for (size_t i = limbs.size(); i-- > 0;) {
            const uint32_t next = limbs[i] & 1u;
            limbs[i] = (limbs[i] >> 1) | (carry << 31);
            carry = next;
        }
        normalize();
    }

    void add_small(uint32_t v) {
        uint64_t carry = v;
        for (size_t i = 0; carry && i < limbs.size(); ++i) {
            const uint64_t s = static_cast<uint64_t>(limbs[i]) + carry;
            limbs[i] = static_cast<uint32_t>(s);
            carry = s >> 32;
        }
        if (carry) limbs.push_back(static_cast<uint32_t>(carry));
    }

    static int cmp(const BigUint& a, const BigUint& b) {
        if (a.limbs.size() != b.limbs.size()) return a.limbs.size() < b.limbs.size() ? -1 : 1;
        for (size_t i = a.limbs.size(); i-- > 0;) {
            if (a.limbs[i] != b.limbs[i]) return a.limbs[i] < b.limbs[i] ? -1 : 1;
        }
        return 0;
    }

    static BigUint add(const BigUint& a, const BigUint& b) {
        BigUint r;
        const size_t n = std::max(a.limbs.size(), b.limbs.size());
        uint64_t carry = 0;
        for (size_t i = 0; i < n; ++i) {
            uint64_t s = carry;
            if (i < a.limbs.size()) s += a.limbs[i];
            if (i < b.limbs.size()) s += b.limbs[i];
            r.limbs.push_back(static_cast<uint32_t>(s));
            carry = s >> 32;
        }
        if (carry) r.limbs.push_back(static_cast<uint32_t>(carry));
        return r;
    }

    // a - b, requires a >= b
    static BigUint sub(const BigUint& a, const BigUint& b) {
        BigUint r;
        int64_t borrow = 0;
        for (size_t i = 0; i < a.limbs.size(); ++i) {
            int64_t s = static_cast<int64_t>(a.limbs[i]) - borrow -
                        (i < b.limbs.size() ? static_cast<int64_t>(b.limbs[i]) : 0);
            if (s < 0) {
                s += (1LL << 32);
                borrow = 1;
            } else {
                borrow = 0;
            }
            r.limbs.push_back(static_cast<uint32_t>(s));
        }
        r.normalize();
        return r;
    }

    static BigUint mul(const BigUint& a, const BigUint& b) {
        BigUint r;
        if (a.is_zero() || b.is_zero()) return r;
        r.limbs.assign(a.limbs.size() + b.limbs.size(), 0);
        for (size_t i = 0; i < a.limbs.size(); ++i) {
            uint64_t carry = 0;
            for (size_t j = 0; j < b.limbs.size(); ++j) {
                const uint64_t cur = static_cast<uint64_t>(a.limbs[i]) * b.limbs[j] +
                                     r.limbs[i + j] + carry;
                r.limbs[i + j] = static_cast<uint32_t>(cur);
                carry = cur >> 32;
            }
            r.limbs[i + b.limbs.size()] += static_cast<uint32_t>(carry);
        }
        r.normalize();
        return r;
    }

    std::vector<std::string> to_bits() const {
        if (is_zero()) return {"0"};
        BigUint x = *this;
        std::vector<std::string> rev;
        while (!x.is_zero()) {
            rev.push_back((x.limbs[0] & 1u) ? "1" : "0");
            x.div2();
        }
        std::reverse(rev.begin(), rev.end());
        return rev;
    }
};

std::vector<std::string> strip_leading_zeros(std::vector<std::string> bits) {
    size_t i = 0;
    while (i + 1 < bits.size() && bits[i] == "0") ++i;
    return std::vector<std::string>(bits.begin() + static_cast<long>(i), bits.end());
}

std::vector<std::string> random_operand(int len, Rng& rng) {
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(len));
    out.push_back(len > 1 ? "1" : pick(kBits, rng));
    for (int i = 1; i < len; ++i) out.push_back(pick(kBits, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Modulo-5 expression machinery
// ---------------------------------------------------------------------------

struct ExprParser {
    const std::vector<std::string>& toks;
    size_t pos = 0;

    explicit ExprParser(const std::vector<std::string>& t) : toks(t) {}

    bool at(const char* s) const { return pos < toks.size() && toks[pos] == s; }

    int parse_expr() {
        int v = parse_term();
        while (at("+") || at("-")) {
            const bool plus = at("+");
            ++pos;
            const int r = parse_term();
            v = mod5(plus ? v + r : v - r);
        }
        return v;
    }

    int parse_term() {
        int v = parse_factor();
        while (at("*")) {
            ++pos;
            v = mod5(static_cast<long long>(v) * parse_factor());
        }
        return v;
    }

    int parse_factor() {
        if (at("-")) {
            ++pos;
            return mod5(-parse_factor());
        }
        if (at("(")) {
            ++pos;
            const int v = parse_expr();
            if (!at(")")) throw std::invalid_argument("expression: missing ')'");
            ++pos;
            return v;
        }
        if (pos < toks.size() && toks[pos].size() == 1 && toks[pos][0] >= '0' && toks[pos][0] <= '4') {
            return toks[pos++][0] - '0';
        }
        throw std::invalid_argument("expression: unexpected token");
    }
};

// Random expression of exactly n tokens over digits 0-4, +,-,*,(,).
// Binary nodes take "atomic" children (digit, negated digit, or a
// parenthesized sub-expression) so the serialization is grouping-unambiguous.
struct BuiltExpr {
    std::vector<std::string> tokens;
    int value = 0;   // mod 5
    int z_coeff = 0; // coefficient of the variable, mod 5 (solve-equation only)
};

BuiltExpr build_expr(int n, Rng& rng, bool with_z);

BuiltExpr build_atom(int n, Rng& rng, bool with_z) {
    BuiltExpr e;
    if (n == 1) {
        if (with_z) {
            e.tokens = {"z"};
            e.z_coeff = 1;
        } else {
            const int d = rng.uniform_int(0, 4);
            e.tokens = {std::to_string(d)};
            e.value = d;
        }
        return e;
    }
    if (n == 2) {
        BuiltExpr inner = build_atom(1, rng, with_z);
        e.tokens = {"-"};
        e.tokens.insert(e.tokens.end(), inner.tokens.begin(), inner.tokens.end());
        e.value = mod5(-inner.value);
        e.z_coeff = mod5(-inner.z_coeff);
        return e;
    }
    BuiltExpr inner = build_expr(n - 2, rng, with_z);
    e.tokens = {"("};
    e.tokens.insert(e.tokens.end(), inner.tokens.begin(), inner.tokens.end());
    e.tokens.push_back(")");
    e.value = inner.value;
    e.z_coeff = inner.z_coeff;
    return e;
}

BuiltExpr build_expr(int n, Rng& rng, bool with_z) {
    if (n <= 2) return build_atom(n, rng, with_z);

    enum { kBinop, kParen, kNegParen };
    std::vector<int> options = {kBinop, kBinop, kBinop, kParen};
    if (n >= 4) options.push_back(kNegParen);
    const int choice = options[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(options.size()) - 1))];

    BuiltExpr e;
    if (choice == kParen || choice == kNegParen) {
        const bool neg = choice == kNegParen;
        BuiltExpr inner = build_expr(n - (neg ? 3 : 2), rng, with_z);
        if (neg) e.tokens.push_back("-");
        e.tokens.push_back("(");
        e.tokens.insert(e.tokens.end(), inner.tokens.begin(), inner.tokens.end());
        e.tokens.push_back(")");
        e.value = neg ? mod5(-inner.value) : inner.value;
        e.z_coeff = neg ? mod5(-inner.z_coeff) : inner.z_coeff;
        return e;
    }

    const int sl = rng.uniform_int(1, n - 2);
    const int sr = n - 1 - sl;
    const bool z_left = with_z && (rng.uniform() < 0.5);
    BuiltExpr l = build_atom(sl, rng, with_z && z_left);
    BuiltExpr r = build_atom(sr, rng, with_z && !z_left);
    const char* ops[3] = {"+", "-", "*"};
    const int op = rng.uniform_int(0, 2);
    e.tokens = l.tokens;
    e.tokens.push_back(ops[op]);
    e.tokens.insert(e.tokens.end(), r.tokens.begin(), r.tokens.end());
    switch (op) {
        case 0:
            e.value = mod5(l.value + r.value);
            e.z_coeff = mod5(l.z_coeff + r.z_coeff);
            break;
        case 1:
            e.value = mod5(l.value - r.value);
            e.z_coeff = mod5(l.z_coeff - r.z_coeff);
            break;
        default:
            // the variable occurs on at most one side, so the cross term vanishes
            e.value = mod5(static_cast<long long>(l.value) * r.value);
            e.z_coeff = mod5(static_cast<long long>(l.z_coeff) * r.value +
                             static_cast<long long>(r.z_coeff) * l.value);
            break;
    }
    return e;
}

// ---------------------------------------------------------------------------
// Task registry
// ---------------------------------------------------------------------------

std::map<std::string, TaskSpec> build_registry() {
    std::map<std::string, TaskSpec> reg;
    auto add = [&reg](TaskSpec spec) {
        if (!spec.supports_length) {
            const int mn = spec.min_length;
            spec.supports_length = [mn](int n) { return n >= mn; };
        }
        reg[spec.name] = std::move(spec);
    };

    // ----- Regular -----
    add(TaskSpec{
        "even_pairs", TaskLevel::RE, kAB, kBool, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string(kAB, n, rng);
            s.length = n;
            s.target = {s.input.front() == s.input.back() ? "True" : "False"};
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            int pairs = 0;
            for (size_t i = 0; i + 1 < in.size(); ++i) {
                if (in[i] != in[i + 1]) ++pairs;
            }
            return {pairs % 2 == 0 ? "True" : "False"};
        }});

    add(TaskSpec{
        "parity_check", TaskLevel::RE, kAB, kBool, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string(kAB, n, rng);
            s.length = n;
            bool even = true;
            for (const auto& c : s.input) {
                if (c == "b") even = !even;
            }
            s.target = {even ? "True" : "False"};
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            const auto bs = std::count(in.begin(), in.end(), "b");
            return {bs % 2 == 0 ? "True" : "False"};
        }});

    add(TaskSpec{
        "cycle_navigation", TaskLevel::RE, {"0", "1", "2"}, kDigits5, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string({"0", "1", "2"}, n, rng);
            s.length = n;
            int posn = 0;
            for (const auto& mv : s.input) {
                if (mv == "1") posn = (posn + 1) % 5;
                else if (mv == "2") posn = (posn + 4) % 5;
            }
            s.target = {std::to_string(posn)};
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            long long delta = 0;
            for (const auto& mv : in) {
                if (mv == "1") delta += 1;
                else if (mv == "2") delta -= 1;
            }
            return {std::to_string(mod5(delta))};
        }});

    // ----- Deterministic context-free -----
    add(TaskSpec{
        "stack_manipulation", TaskLevel::DCF, {"a", "b", "POP", "PUSH"}, kAB, 1, nullptr,
        [](int n, Rng& rng) {
            // Token budget n = initial string + op tokens (POP = 1, PUSH x = 2).
            // The op stream is generated so the stack never empties.
            std::vector<int> valid_k;
            for (int k = 1; k <= n; ++k) {
                if (n - k != 1 || k >= 2) valid_k.push_back(k);
            }
            const int k = valid_k[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(valid_k.size()) - 1))];
            Sample s;
            s.length = n;
            s.input = random_string(kAB, k, rng);
            std::vector<std::string> st(s.input.begin(), s.input.end());  // bottom..top
            int budget = n - k;
            while (budget > 0) {
                const bool can_pop = st.size() >= 2 && (budget - 1 != 1 || st.size() - 1 >= 2);
                const bool can_push = budget >= 2 && (budget - 2 != 1 || st.size() + 1 >= 2);
                bool do_pop;
                if (can_pop && can_push) do_pop = rng.uniform() < 0.5;
                else do_pop = can_pop;
                if (do_pop) {
                    s.input.push_back("POP");
                    st.pop_back();
                    budget -= 1;
                } else {
                    const std::string sym = pick(kAB, rng);
                    s.input.push_back("PUSH");
                    s.input.push_back(sym);
                    st.push_back(sym);
                    budget -= 2;
                }
            }
            s.target = st;
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            std::vector<std::string> st;
            size_t i = 0;
            while (i < in.size() && (in[i] == "a" || in[i] == "b")) st.push_back(in[i++]);
            while (i < in.size()) {
                if (in[i] == "POP") {
                    if (st.empty()) throw std::invalid_argument("stack_manipulation: pop on empty stack");
                    st.pop_back();
                    ++i;
                } else if (in[i] == "PUSH" && i + 1 < in.size()) {
                    st.push_back(in[i + 1]);
                    i += 2;
                } else {
                    throw std::invalid_argument("stack_manipulation: malformed op stream");
                }
            }
            return st;
        }});

    add(TaskSpec{
        "reverse_string", TaskLevel::DCF, kAB, kAB, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string(kAB, n, rng);
            s.length = n;
            s.target = s.input;
            std::reverse(s.target.begin(), s.target.end());
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            std::vector<std::string> out;
            out.reserve(in.size());
            for (size_t i = in.size(); i-- > 0;) out.push_back(in[i]);
            return out;
        }});

    add(TaskSpec{
        "modular_arithmetic", TaskLevel::DCF,
        {"0", "1", "2", "3", "4", "+", "-", "*", "(", ")"}, kDigits5, 1, nullptr,
        [](int n, Rng& rng) {
            BuiltExpr e = build_expr(n, rng, false);
            Sample s;
            s.input = std::move(e.tokens);
            s.length = n;
            s.target = {std::to_string(e.value)};
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            return {std::to_string(eval_mod5_expression(in))};
        }});

    add(TaskSpec{
        "solve_equation", TaskLevel::DCF,
        {"0", "1", "2", "3", "4", "+", "-", "*", "(", ")", "z", "="}, kDigits5, 3, nullptr,
        [](int n, Rng& rng) {
            // expr(z) '=' rhs with a unique solution (the z coefficient must be
            // invertible mod 5, i.e. nonzero).
            for (int attempt = 0; attempt < 1000; ++attempt) {
                BuiltExpr e = build_expr(n - 2, rng, true);
                if (e.z_coeff == 0) continue;
                const int z_star = rng.uniform_int(0, 4);
                const int rhs = mod5(static_cast<long long>(e.z_coeff) * z_star + e.value);
                Sample s;
                s.input = std::move(e.tokens);
                s.input.push_back("=");
                s.input.push_back(std::to_string(rhs));
                s.length = n;
                s.target = {std::to_string(z_star)};
                return s;
            }
            throw std::runtime_error("solve_equation: failed to build a unique-solution equation");
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            auto eq = std::find(in.begin(), in.end(), "=");
            if (eq == in.end() || eq + 1 == in.end()) {
                throw std::invalid_argument("solve_equation: missing '= rhs'");
            }
            std::vector<std::string> lhs(in.begin(), eq);
            const int rhs = std::stoi(*(eq + 1));
            std::vector<int> sols;
            for (int z = 0; z <= 4; ++z) {
                std::vector<std::string> sub = lhs;
                for (auto& t : sub) {
                    if (t == "z") t = std::to_string(z);
                }
                if (eval_mod5_expression(sub) == rhs) sols.push_back(z);
            }
            if (sols.size() != 1) throw std::invalid_argument("solve_equation: solution not unique");
            return {std::to_string(sols[0])};
        }});

    // ----- Context-sensitive -----
    add(TaskSpec{
        "binary_addition", TaskLevel::CS, {"0", "1", "+"}, kBits, 3, nullptr,
        [](int n, Rng& rng) {
            const int la = rng.uniform_int(1, n - 2);
            const int lb = n - 1 - la;
            Sample s;
            s.length = n;
            const auto a = random_operand(la, rng);
            const auto b = random_operand(lb, rng);
            s.input = a;
            s.input.push_back("+");
            s.input.insert(s.input.end(), b.begin(), b.end());
            // schoolbook full adder over the digit characters
            std::vector<std::string> rev;
            int i = la - 1, j = lb - 1, carry = 0;
            while (i >= 0 || j >= 0 || carry) {
                int v = carry;
                if (i >= 0) v += a[static_cast<size_t>(i--)] == "1";
                if (j >= 0) v += b[static_cast<size_t>(j--)] == "1";
                rev.push_back(v % 2 ? "1" : "0");
                carry = v / 2;
            }
            std::reverse(rev.begin(), rev.end());
            s.target = strip_leading_zeros(std::move(rev));
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            const auto plus = std::find(in.begin(), in.end(), "+");
            if (plus == in.end()) throw std::invalid_argument("binary_addition: missing '+'");
            const size_t p = static_cast<size_t>(plus - in.begin());
            const BigUint a = BigUint::from_bits(in, 0, p);
            const BigUint b = BigUint::from_bits(in, p + 1, in.size());
            return BigUint::add(a, b).to_bits();
        }});

    add(TaskSpec{
        "binary_multiplication", TaskLevel::CS, {"0", "1", "*"}, kBits, 3, nullptr,
        [](int n, Rng& rng) {
            const int la = rng.uniform_int(1, n - 2);
            const int lb = n - 1 - la;
            Sample s;
            s.length = n;
            const auto a = random_operand(la, rng);
            const auto b = random_operand(lb, rng);
            s.input = a;
            s.input.push_back("*");
            s.input.insert(s.input.end(), b.begin(), b.end());
            // shift-and-add on digit arrays, least significant first
            std::vector<int> acc(static_cast<size_t>(la + lb), 0);
            for (int i = 0; i < lb; ++i) {
                if (b[static_cast<size_t>(lb - 1 - i)] != "1") continue;
                for (int j = 0; j < la; ++j) {
                    if (a[static_cast<size_t>(la - 1 - j)] == "1") acc[static_cast<size_t>(i + j)] += 1;
                }
            }
            int carry = 0;
            std::vector<std::string> rev;
            for (size_t k = 0; k < acc.size() || carry; ++k) {
                int v = carry + (k < acc.size() ? acc[k] : 0);
                rev.push_back(v % 2 ? "1" : "0");
                carry = v / 2;
            }
            std::reverse(rev.begin(), rev.end());
            s.target = strip_leading_zeros(std::move(rev));
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            const auto star = std::find(in.begin(), in.end(), "*");
            if (star == in.end()) throw std::invalid_argument("binary_multiplication: missing '*'");
            const size_t p = static_cast<size_t>(star - in.begin());
            const BigUint a = BigUint::from_bits(in, 0, p);
            const BigUint b = BigUint::from_bits(in, p + 1, in.size());
            return BigUint::mul(a, b).to_bits();
        }});

    add(TaskSpec{
        "compute_sqrt", TaskLevel::CS, kBits, kBits, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.length = n;
            s.input = random_operand(n, rng);
            // digit-by-digit restoring square root on bit vectors (LSB-first)
            using BitVec = std::vector<int>;
            auto cmp_le = [](const BitVec& x, const BitVec& y) {  // x <= y
                size_t nx = x.size(), ny = y.size();
                while (nx > 0 && x[nx - 1] == 0) --nx;
                while (ny > 0 && y[ny - 1] == 0) --ny;
                if (nx != ny) return nx < ny;
                for (size_t i = nx; i-- > 0;) {
                    if (x[i] != y[i]) return x[i] < y[i];
                }
                return true;
            };
            auto sub_in_place = [](BitVec& x, const BitVec& y) {  // x -= y, x >= y
                int borrow = 0;
                for (size_t i = 0; i < x.size(); ++i) {
                    int v = x[i] - borrow - (i < y.size() ? y[i] : 0);
                    if (v < 0) { v += 2; borrow = 1; } else borrow = 0;
                    x[i] = v;
                }
            };
            std::vector<int> bits;  // MSB-first, padded to even length
            if (n % 2 == 1) bits.push_back(0);
            for (const auto& c : s.input) bits.push_back(c == "1" ? 1 : 0);
            BitVec rem, root;  // LSB-first
            for (size_t p = 0; p < bits.size(); p += 2) {
                rem.insert(rem.begin(), {bits[p + 1], bits[p]});  // rem = 4*rem + pair
                BitVec trial = root;                               // trial = 4*root + 1
                trial.insert(trial.begin(), {1, 0});
                if (cmp_le(trial, rem)) {
                    sub_in_place(rem, trial);
                    root.insert(root.begin(), 1);
                } else {
                    root.insert(root.begin(), 0);
                }
            }
            std::vector<std::string> out;
            for (size_t i = root.size(); i-- > 0;) out.push_back(root[i] ? "1" : "0");
            s.target = strip_leading_zeros(std::move(out));
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            const BigUint x = BigUint::from_bits(in, 0, in.size());
            // binary search for the integer square root
            BigUint lo, hi;
            hi.limbs.assign(in.size() / 64 + 1, 0);
            hi.limbs.push_back(1);  // comfortably above sqrt(x)
            while (BigUint::cmp(lo, hi) < 0) {
                BigUint mid = BigUint::add(BigUint::add(lo, hi), [] { BigUint o; o.add_small(1); return o; }());
                mid.div2();
                if (BigUint::cmp(BigUint::mul(mid, mid), x) <= 0) lo = mid;
                else hi = BigUint::sub(mid, [] { BigUint o; o.add_small(1); return o; }());
            }
            return lo.to_bits();
        }});

    add(TaskSpec{
        "bucket_sort", TaskLevel::CS, kDigits5, kDigits5, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string(kDigits5, n, rng);
            s.length = n;
            int counts[5] = {0, 0, 0, 0, 0};
            for (const auto& c : s.input) counts[c[0] - '0'] += 1;
            for (int d = 0; d < 5; ++d) {
                for (int k = 0; k < counts[d]; ++k) s.target.push_back(std::to_string(d));
            }
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            std::vector<std::string> out = in;
            std::sort(out.begin(), out.end());
            return out;
        }});

    add(TaskSpec{
        "duplicate_string", TaskLevel::CS, kAB, kAB, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string(kAB, n, rng);
            s.length = n;
            s.target = s.input;
            s.target.insert(s.target.end(), s.input.begin(), s.input.end());
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            std::vector<std::string> out;
            out.reserve(in.size() * 2);
            for (size_t i = 0; i < 2 * in.size(); ++i) out.push_back(in[i % in.size()]);
            return out;
        }});

    add(TaskSpec{
        "missing_duplicate", TaskLevel::CS, {"a", "b", "_"}, kAB, 2,
        [](int n) { return n >= 2 && n % 2 == 0; },
        [](int n, Rng& rng) {
            const int k = n / 2;
            Sample s;
            s.length = n;
            const auto half = random_string(kAB, k, rng);
            s.input = half;
            s.input.insert(s.input.end(), half.begin(), half.end());
            const int p = rng.uniform_int(0, n - 1);
            s.target = {s.input[static_cast<size_t>(p)]};
            s.input[static_cast<size_t>(p)] = "_";
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            if (in.size() % 2 != 0) throw std::invalid_argument("missing_duplicate: odd input");
            const size_t k = in.size() / 2;
            size_t p = in.size();
            for (size_t i = 0; i < in.size(); ++i) {
                if (in[i] == "_") { p = i; break; }
            }
            if (p == in.size()) throw std::invalid_argument("missing_duplicate: no placeholder");
            // the intact half spells out the original string
            return {p < k ? in[k + p] : in[p - k]};
        }});

    add(TaskSpec{
        "odds_first", TaskLevel::CS, kAB, kAB, 1, nullptr,
        [](int n, Rng& rng) {
            Sample s;
            s.input = random_string(kAB, n, rng);
            s.length = n;
            s.target.resize(static_cast<size_t>(n));
            const int n_odd = (n + 1) / 2;  // 1-based odd positions = even indices
            for (int j = 0; j < n_odd; ++j) s.target[static_cast<size_t>(j)] = s.input[static_cast<size_t>(2 * j)];
            for (int j = 0; 2 * j + 1 < n; ++j) {
                s.target[static_cast<size_t>(n_odd + j)] = s.input[static_cast<size_t>(2 * j + 1)];
            }
            return s;
        },
        [](const std::vector<std::string>& in) -> std::vector<std::string> {
            std::vector<std::string> odd, even;
            for (size_t i = 0; i < in.size(); ++i) {
                (i % 2 == 0 ? odd : even).push_back(in[i]);
            }
            odd.insert(odd.end(), even.begin(), even.end());
            return odd;
        }});

    return reg;
}

const std::map<std::string, TaskSpec>& registry() {
    static const std::map<std::string, TaskSpec> reg = build_registry();
    return reg;
}

} // namespace

int eval_mod5_expression(const std::vector<std::string>& tokens) {
    ExprParser p(tokens);
    const int v = p.parse_expr();
    if (p.pos != tokens.size()) throw std::invalid_argument("expression: trailing tokens");
    return v;
}

const TaskSpec& get_task(const std::string& name) {
    const auto& reg = registry();
    const auto it = reg.find(name);
    if (it == reg.end()) throw std::invalid_argument("unknown task: " + name);
    return it->second;
}

std::vector<std::string> task_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : registry()) names.push_back(k);
    return names;
}

Sample generate(const TaskSpec& task, int length, Rng& rng) {
    if (length < 1 || !task.supports_length(length)) {
        throw std::invalid_argument(task.name + ": unsupported length " + std::to_string(length));
    }
    Sample s = task.generate(length, rng);
    if (s.target.empty()) throw std::logic_error(task.name + ": generator produced empty target");
    return s;
}

std::vector<Sample> batch(const TaskSpec& task, int min_len, int max_len, int n, Rng& rng) {
    if (min_len < 1 || max_len < min_len) throw std::invalid_argument("invalid length range");
    bool any = false;
    for (int l = min_len; l <= max_len; ++l) {
        if (task.supports_length(l)) { any = true; break; }
    }
    if (!any) throw std::invalid_argument(task.name + ": no supported length in range");
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int len = rng.uniform_int(min_len, max_len);
        while (!task.supports_length(len)) len = rng.uniform_int(min_len, max_len);
        out.push_back(generate(task, len, rng));
    }
    return out;
}

Vocabulary Vocabulary::for_task(const TaskSpec& task) {
    Vocabulary v;
    v.id_to_symbol = {"<pad>", "<bos>", "<sep>", "<eos>"};
    std::set<std::string> symbols(task.input_alphabet.begin(), task.input_alphabet.end());
    symbols.insert(task.output_alphabet.begin(), task.output_alphabet.end());
    for (const auto& s : symbols) v.id_to_symbol.push_back(s);
    for (size_t i = 0; i < v.id_to_symbol.size(); ++i) {
        v.symbol_to_id[v.id_to_symbol[i]] = static_cast<int>(i);
    }
    return v;
}

int Vocabulary::id(const std::string& symbol) const {
    const auto it = symbol_to_id.find(symbol);
    if (it == symbol_to_id.end()) throw std::invalid_argument("unknown symbol: " + symbol);
    return it->second;
}

const std::string& Vocabulary::symbol(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("symbol id out of range");
    return id_to_symbol[static_cast<size_t>(id)];
}

Encoded encode(const Sample& sample, const Vocabulary& vocab) {
    if (sample.target.empty()) throw std::invalid_argument("encode: empty target");
    Encoded e;
    e.tokens.push_back(Vocabulary::bos);
    for (const auto& s : sample.input) e.tokens.push_back(vocab.id(s));
    e.sep_pos = static_cast<int>(e.tokens.size());
    e.tokens.push_back(Vocabulary::sep);
    for (const auto& s : sample.target) e.tokens.push_back(vocab.id(s));
    e.tokens.push_back(Vocabulary::eos);
    e.loss_mask.assign(e.tokens.size(), 0);
    for (int t = e.sep_pos; t < e.sep_pos + static_cast<int>(sample.target.size()) + 1; ++t) {
        e.loss_mask[static_cast<size_t>(t)] = 1;
    }
    return e;
}

Sample decode(const Encoded& enc, const Vocabulary& vocab) {
    Sample s;
    bool past_sep = false;
    for (int tok : enc.tokens) {
        if (tok == Vocabulary::bos || tok == Vocabulary::pad) continue;
        if (tok == Vocabulary::sep) { past_sep = true; continue; }
        if (tok == Vocabulary::eos) break;
        (past_sep ? s.target : s.input).push_back(vocab.symbol(tok));
    }
    s.length = static_cast<int>(s.input.size());
    return s;
}

namespace {
template <typename T>
double accuracy_impl(const std::vector<T>& pred, const std::vector<T>& target) {
    if (target.empty()) throw std::invalid_argument("token_accuracy: empty target");
    const size_t upto = std::min(pred.size(), target.size());
    size_t hits = 0;
    for (size_t i = 0; i < upto; ++i) {
        if (pred[i] == target[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(target.size());
}
} // namespace

double token_accuracy(const std::vector<int>& pred, const std::vector<int>& target) {
    return accuracy_impl(pred, target);
}

double token_accuracy(const std::vector<std::string>& pred, const std::vector<std::string>& target) {
    return accuracy_impl(pred, target);
}

} // namespace softstack::tasks
