#include "visor/graph/property.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "visor/common/error.hpp"

namespace visor::graph {

std::string_view type_name(PropertyType t) noexcept {
  switch (t) {
    case PropertyType::boolean: return "boolean";
    case PropertyType::integer: return "integer";
    case PropertyType::real: return "float";
    case PropertyType::string: return "string";
    case PropertyType::datetime: return "datetime";
    case PropertyType::blob: return "blob";
  }
  return "?";
}

std::optional<CompareOp> parse_compare_op(std::string_view s) noexcept {
  if (s == "==") return CompareOp::eq;
  if (s == "!=") return CompareOp::ne;
  if (s == ">") return CompareOp::gt;
  if (s == ">=") return CompareOp::ge;
  if (s == "<") return CompareOp::lt;
  if (s == "<=") return CompareOp::le;
  return std::nullopt;
}

std::string_view op_symbol(CompareOp op) noexcept {
  switch (op) {
    case CompareOp::eq: return "==";
    case CompareOp::ne: return "!=";
    case CompareOp::gt: return ">";
    case CompareOp::ge: return ">=";
    case CompareOp::lt: return "<";
    case CompareOp::le: return "<=";
  }
  return "?";
}

namespace {

bool is_numeric(PropertyType t) { return t == PropertyType::integer || t == PropertyType::real; }

bool apply(std::partial_ordering ord, CompareOp op) {
  if (ord == std::partial_ordering::unordered) return op == CompareOp::ne;
  switch (op) {
    case CompareOp::eq: return ord == 0;
    case CompareOp::ne: return ord != 0;
    case CompareOp::gt: return ord > 0;
    case CompareOp::ge: return ord >= 0;
    case CompareOp::lt: return ord < 0;
    case CompareOp::le: return ord <= 0;
  }
  return false;
}

std::partial_ordering numeric_cmp(const PropertyValue& a, const PropertyValue& b) {
  if (auto* ai = std::get_if<std::int64_t>(&a)) {
    if (auto* bi = std::get_if<std::int64_t>(&b)) return *ai <=> *bi;
    return static_cast<double>(*ai) <=> std::get<double>(b);
  }
  double ad = std::get<double>(a);
  if (auto* bi = std::get_if<std::int64_t>(&b)) return ad <=> static_cast<double>(*bi);
  return ad <=> std::get<double>(b);
}

}  // namespace

bool satisfies(const PropertyValue& value, CompareOp op, const PropertyValue& comparand) {
  auto vt = type_of(value), ct = type_of(comparand);
  if (is_numeric(vt) && is_numeric(ct)) return apply(numeric_cmp(value, comparand), op);
  if (vt != ct) return false;
  return std::visit(
      [&](const auto& v) -> bool {
        using T = std::decay_t<decltype(v)>;
        const auto& c = std::get<T>(comparand);
        if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, BlobLocator>) {
          if (op == CompareOp::eq) return v == c;
          if (op == CompareOp::ne) return v != c;
          return false;
        } else {
          return apply(std::partial_ordering(v <=> c), op);
        }
      },
      value);
}

void check_constraint(const Constraint& c, std::optional<PropertyType> established) {
  auto ct = type_of(c.comparand);
  bool ordering = c.op != CompareOp::eq && c.op != CompareOp::ne;
  if (ordering && (ct == PropertyType::boolean || ct == PropertyType::blob))
    throw Error(Errc::type_conflict, "operator " + std::string(op_symbol(c.op)) + " does not apply to " +
                                         std::string(type_name(ct)) + " comparand on '" + c.property + "'");
  if (!established || *established == ct) return;
  if (is_numeric(*established) && is_numeric(ct)) return;
  throw Error(Errc::type_conflict, "property '" + c.property + "' is " + std::string(type_name(*established)) +
                                       ", comparand is " + std::string(type_name(ct)));
}

bool ValueLess::operator()(const PropertyValue& a, const PropertyValue& b) const {
  if (a.index() != b.index()) return a.index() < b.index();
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        return x < std::get<T>(b);
      },
      a);
}

namespace {

int parse_int(std::string_view s, std::size_t pos, std::size_t len) {
  if (pos + len > s.size()) throw Error(Errc::validation, "malformed datetime '" + std::string(s) + "'");
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
  if (ec != std::errc{} || ptr != s.data() + pos + len)
    throw Error(Errc::validation, "malformed datetime '" + std::string(s) + "'");
  return v;
}

void expect(std::string_view s, std::size_t pos, char c) {
  if (pos >= s.size() || s[pos] != c) throw Error(Errc::validation, "malformed datetime '" + std::string(s) + "'");
}

}  // namespace

DateTime parse_datetime(std::string_view s) {
  using namespace std::chrono;
  int y = parse_int(s, 0, 4);
  expect(s, 4, '-');
  int mo = parse_int(s, 5, 2);
  expect(s, 7, '-');
  int d = parse_int(s, 8, 2);
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw Error(Errc::validation, "invalid date '" + std::string(s) + "'");
  std::int64_t micros = duration_cast<microseconds>(sys_days{ymd}.time_since_epoch()).count();
  if (s.size() == 10) return {micros};

  if (s[10] != 'T' && s[10] != ' ') throw Error(Errc::validation, "malformed datetime '" + std::string(s) + "'");
  int hh = parse_int(s, 11, 2);
  expect(s, 13, ':');
  int mm = parse_int(s, 14, 2);
  expect(s, 16, ':');
  int ss = parse_int(s, 17, 2);
  if (hh > 23 || mm > 59 || ss > 60) throw Error(Errc::validation, "invalid time '" + std::string(s) + "'");
  micros += ((hh * 60LL + mm) * 60LL + ss) * 1'000'000LL;

  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::int64_t frac = 0;
    int digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 6) {
        frac = frac * 10 + (s[pos] - '0');
        ++digits;
      }
      ++pos;
    }
    if (digits == 0) throw Error(Errc::validation, "malformed fraction in '" + std::string(s) + "'");
    while (digits++ < 6) frac *= 10;
    micros += frac;
  }
  if (pos == s.size()) return {micros};
  if (s[pos] == 'Z' && pos + 1 == s.size()) return {micros};
  if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size()) {
    int oh = parse_int(s, pos + 1, 2);
    expect(s, pos + 3, ':');
    int om = parse_int(s, pos + 4, 2);
    std::int64_t off = (oh * 60LL + om) * 60'000'000LL;
    return {s[pos] == '+' ? micros - off : micros + off};
  }
  throw Error(Errc::validation, "malformed timezone in '" + std::string(s) + "'");
}

std::string format_datetime(DateTime dt) {
  using namespace std::chrono;
  auto tp = sys_time<microseconds>{microseconds{dt.micros}};
  auto days = floor<std::chrono::days>(tp);
  year_month_day ymd{days};
  auto rem = tp - days;
  auto h = duration_cast<hours>(rem);
  rem -= h;
  auto m = duration_cast<minutes>(rem);
  rem -= m;
  auto sec = duration_cast<seconds>(rem);
  rem -= sec;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%06lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                static_cast<int>(m.count()), static_cast<int>(sec.count()), static_cast<long long>(rem.count()));
  return buf;
}

namespace {

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (static_cast<unsigned char>(c) < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", static_cast<unsigned char>(c));
      out += buf;
      continue;
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string render(const PropertyValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) return x ? "b:true" : "b:false";
        else if constexpr (std::is_same_v<T, std::int64_t>) return "i:" + std::to_string(x);
        else if constexpr (std::is_same_v<T, double>) {
          char buf[40];
          std::snprintf(buf, sizeof buf, "f:%.17g", x);
          return buf;
        } else if constexpr (std::is_same_v<T, std::string>) return "s:" + quote(x);
        else if constexpr (std::is_same_v<T, DateTime>) return "t:" + std::to_string(x.micros);
        else return "l:" + quote(x.key);
      },
      v);
}

}  // namespace visor::graph
