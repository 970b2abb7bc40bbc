#pragma once

#include <cctype>
#include <string>
#include <string_view>

#include "hdcs/category.hpp"
#include "hdcs/errors.hpp"

namespace hdcs {

enum class Formalism { ccg, tlg, aethel };

inline Formalism formalism_from_string(const std::string& s) {
  if (s == "ccg") return Formalism::ccg;
  if (s == "tlg") return Formalism::tlg;
  if (s == "aethel") return Formalism::aethel;
  throw ConfigError("unknown formalism: " + s + " (expected ccg, tlg or aethel)");
}

inline std::string to_string(Formalism f) {
  switch (f) {
    case Formalism::ccg: return "ccg";
    case Formalism::tlg: return "tlg";
    default: return "aethel";
  }
}

namespace surface {

// Unicode operators; ASCII fallbacks are accepted on input and selectable on
// output.
inline constexpr std::string_view kArrow = "⊸";    // linear implication
inline constexpr std::string_view kDiamond = "◇";  // complement / unary modality
inline constexpr std::string_view kBox = "□";      // adjunct / unary modality
inline constexpr std::string_view kArrowAscii = "-o";
inline constexpr std::string_view kDiamondAscii = "dia:";
inline constexpr std::string_view kBoxAscii = "box:";

// Artificial terminal inserted by the pseudo-binarization of unary nodes.
inline constexpr std::string_view kArtTerminal = "⟨art⟩";

inline bool is_diamond(const std::string& label) {
  return std::string_view(label).substr(0, kDiamond.size()) == kDiamond;
}
inline bool is_box(const std::string& label) {
  return std::string_view(label).substr(0, kBox.size()) == kBox;
}
inline bool is_arrowish(const std::string& label) {
  return std::string_view(label).substr(0, kArrow.size()) == kArrow;
}

struct Cursor {
  std::string_view text;
  std::size_t pos = 0;

  bool eof() const { return pos >= text.size(); }
  char peek() const { return eof() ? '\0' : text[pos]; }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool try_consume(std::string_view tok) {
    if (text.substr(pos, tok.size()) == tok) {
      pos += tok.size();
      return true;
    }
    return false;
  }

  void expect(char c, const char* what) {
    if (peek() != c) throw SyntaxError(std::string("expected ") + what, pos);
    ++pos;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw SyntaxError(msg, pos); }
};

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)); }
inline bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'';
}

// --- CCG ---------------------------------------------------------------
// atom[feature] with infix \ and /, left-associative; operator children are
// ordered (result, argument) in written order.

inline RawNode parse_ccg_expr(Cursor& cur);

inline RawNode parse_ccg_term(Cursor& cur) {
  cur.skip_ws();
  if (cur.peek() == '(') {
    ++cur.pos;
    RawNode inner = parse_ccg_expr(cur);
    cur.skip_ws();
    cur.expect(')', "')'");
    return inner;
  }
  char c = cur.peek();
  if (c == ',' || c == '.' || c == ';' || c == ':') {
    ++cur.pos;
    return RawNode{std::string(1, c), {}};
  }
  if (!ident_start(c)) cur.fail("expected category atom");
  std::string name;
  while (!cur.eof() && ident_char(cur.peek())) name += cur.text[cur.pos++];
  if (cur.peek() == '[') {
    name += '[';
    ++cur.pos;
    while (!cur.eof() && cur.peek() != ']') {
      char f = cur.text[cur.pos++];
      if (!ident_char(f) && f != ',' && f != '-') cur.fail("bad feature character");
      name += f;
    }
    cur.expect(']', "']'");
    name += ']';
  }
  return RawNode{name, {}};
}

inline RawNode parse_ccg_expr(Cursor& cur) {
  RawNode node = parse_ccg_term(cur);
  for (;;) {
    cur.skip_ws();
    char c = cur.peek();
    if (c != '/' && c != '\\') break;
    ++cur.pos;
    RawNode rhs = parse_ccg_term(cur);
    node = RawNode{std::string(1, c), {std::move(node), std::move(rhs)}};
  }
  return node;
}

// --- TLG ---------------------------------------------------------------
// Directional slashes with digit modes plus unary modalities; unary nodes
// survive here and are removed by the binarization adapter.

inline RawNode parse_tlg_expr(Cursor& cur);

inline std::string parse_mode_digits(Cursor& cur) {
  std::string mode;
  while (!cur.eof() && std::isdigit(static_cast<unsigned char>(cur.peek())))
    mode += cur.text[cur.pos++];
  return mode;
}

inline RawNode parse_tlg_term(Cursor& cur) {
  cur.skip_ws();
  if (cur.peek() == '(') {
    ++cur.pos;
    RawNode inner = parse_tlg_expr(cur);
    cur.skip_ws();
    cur.expect(')', "')'");
    return inner;
  }
  bool diamond = cur.try_consume(kDiamond) || cur.try_consume(kDiamondAscii);
  bool box = !diamond && (cur.try_consume(kBox) || cur.try_consume(kBoxAscii));
  if (diamond || box) {
    std::string label = std::string(diamond ? kDiamond : kBox) + parse_mode_digits(cur);
    cur.skip_ws();
    cur.expect('(', "'(' after modality");
    RawNode inner = parse_tlg_expr(cur);
    cur.skip_ws();
    cur.expect(')', "')'");
    return RawNode{std::move(label), {std::move(inner)}};
  }
  if (!ident_start(cur.peek())) cur.fail("expected category atom");
  std::string name;
  while (!cur.eof() && ident_char(cur.peek())) name += cur.text[cur.pos++];
  return RawNode{name, {}};
}

inline RawNode parse_tlg_expr(Cursor& cur) {
  RawNode node = parse_tlg_term(cur);
  for (;;) {
    cur.skip_ws();
    char c = cur.peek();
    if (c != '/' && c != '\\') break;
    ++cur.pos;
    std::string op = std::string(1, c) + parse_mode_digits(cur);
    RawNode rhs = parse_tlg_term(cur);
    node = RawNode{std::move(op), {std::move(node), std::move(rhs)}};
  }
  return node;
}

// --- AEthel -------------------------------------------------------------
// Right-associative linear implication; dependency-named diamond (complement)
// and box (adjunct) markers, removed by the merge adapter.

inline RawNode parse_aethel_expr(Cursor& cur);

inline RawNode parse_aethel_operand(Cursor& cur) {
  cur.skip_ws();
  if (cur.peek() == '(') {
    ++cur.pos;
    RawNode inner = parse_aethel_expr(cur);
    cur.skip_ws();
    cur.expect(')', "')'");
    return inner;
  }
  bool diamond = cur.try_consume(kDiamond) || cur.try_consume(kDiamondAscii);
  bool box = !diamond && (cur.try_consume(kBox) || cur.try_consume(kBoxAscii));
  if (diamond || box) {
    std::string dep;
    while (!cur.eof() && ident_char(cur.peek())) dep += cur.text[cur.pos++];
    if (dep.empty()) cur.fail("expected dependency name after marker");
    cur.skip_ws();
    cur.expect('(', "'(' after marker");
    RawNode inner = parse_aethel_expr(cur);
    cur.skip_ws();
    cur.expect(')', "')'");
    return RawNode{std::string(diamond ? kDiamond : kBox) + dep, {std::move(inner)}};
  }
  if (!ident_start(cur.peek())) cur.fail("expected category atom");
  std::string name;
  while (!cur.eof() && ident_char(cur.peek())) name += cur.text[cur.pos++];
  return RawNode{name, {}};
}

inline RawNode parse_aethel_expr(Cursor& cur) {
  RawNode lhs = parse_aethel_operand(cur);
  cur.skip_ws();
  if (cur.try_consume(kArrow) || cur.try_consume(kArrowAscii)) {
    RawNode rhs = parse_aethel_expr(cur);
    return RawNode{std::string(kArrow), {std::move(lhs), std::move(rhs)}};
  }
  return lhs;
}

}  // namespace surface

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

// Every unary node becomes binary with an artificial terminal in the right
// slot; the left slot keeps the semantic payload.
inline RawNode binarize_unary_tlg(const RawNode& n) {
  RawNode out{n.label, {}};
  for (const auto& kid : n.kids) out.kids.push_back(binarize_unary_tlg(kid));
  if (out.kids.size() == 1) {
    out.kids.push_back(RawNode{std::string(surface::kArtTerminal), {}});
  }
  return out;
}

inline RawNode debinarize_unary_tlg(const RawNode& n) {
  RawNode out{n.label, {}};
  for (const auto& kid : n.kids) out.kids.push_back(debinarize_unary_tlg(kid));
  if (out.kids.size() == 2 && out.kids[1].label == surface::kArtTerminal &&
      out.kids[1].kids.empty() && (surface::is_diamond(n.label) || surface::is_box(n.label))) {
    out.kids.pop_back();
  }
  return out;
}

// Complement (diamond) markers fuse into the implication whose argument they
// decorate; adjunct (box) markers fuse into the implication they wrap. The
// fused labels parse back apart, so the translation is invertible.
inline RawNode merge_modalities_aethel(const RawNode& n) {
  if (surface::is_box(n.label) && n.kids.size() == 1) {
    RawNode inner = merge_modalities_aethel(n.kids[0]);
    if (!surface::is_arrowish(inner.label))
      throw MarkerPlacement("adjunct marker " + n.label +
                            " has no binary operator to fuse with");
    return RawNode{n.label + inner.label, std::move(inner.kids)};
  }
  if (surface::is_diamond(n.label))
    throw MarkerPlacement("complement marker " + n.label +
                          " does not decorate the argument of a binary operator");
  if (n.label == surface::kArrow && n.kids.size() == 2) {
    RawNode arg = n.kids[0];
    std::string suffix;
    if (surface::is_diamond(arg.label) && arg.kids.size() == 1) {
      suffix = arg.label;
      arg = arg.kids[0];
    }
    return RawNode{std::string(surface::kArrow) + suffix,
                   {merge_modalities_aethel(arg), merge_modalities_aethel(n.kids[1])}};
  }
  RawNode out{n.label, {}};
  for (const auto& kid : n.kids) out.kids.push_back(merge_modalities_aethel(kid));
  return out;
}

inline RawNode unmerge_modalities_aethel(const RawNode& n) {
  std::vector<RawNode> kids;
  for (const auto& kid : n.kids) kids.push_back(unmerge_modalities_aethel(kid));
  std::size_t arrow_at = n.label.find(surface::kArrow);
  if (arrow_at == std::string::npos || kids.size() != 2) return RawNode{n.label, std::move(kids)};
  std::string box_part = n.label.substr(0, arrow_at);
  std::string dia_part = n.label.substr(arrow_at + surface::kArrow.size());
  RawNode arg = std::move(kids[0]);
  if (!dia_part.empty()) arg = RawNode{dia_part, {std::move(arg)}};  // suffix keeps its marker
  RawNode core{std::string(surface::kArrow), {std::move(arg), std::move(kids[1])}};
  if (box_part.empty()) return core;
  return RawNode{std::move(box_part), {std::move(core)}};
}

// ---------------------------------------------------------------------------
// Parse / print entry points
// ---------------------------------------------------------------------------

// Surface string to raw tree, before adapters.
inline RawNode parse_raw(const std::string& text, Formalism f) {
  surface::Cursor cur{text, 0};
  RawNode node;
  switch (f) {
    case Formalism::ccg: node = surface::parse_ccg_expr(cur); break;
    case Formalism::tlg: node = surface::parse_tlg_expr(cur); break;
    case Formalism::aethel: node = surface::parse_aethel_expr(cur); break;
  }
  cur.skip_ws();
  if (!cur.eof()) cur.fail("unexpected trailing input");
  return node;
}

inline RawNode adapter_apply(const RawNode& raw, Formalism f) {
  switch (f) {
    case Formalism::tlg: return binarize_unary_tlg(raw);
    case Formalism::aethel: return merge_modalities_aethel(raw);
    default: return raw;
  }
}

inline RawNode adapter_invert(const RawNode& raw, Formalism f) {
  switch (f) {
    case Formalism::tlg: return debinarize_unary_tlg(raw);
    case Formalism::aethel: return unmerge_modalities_aethel(raw);
    default: return raw;
  }
}

inline CategoryTree parse_category(const std::string& text, Formalism f, SymbolTable& table,
                                   bool strict = false) {
  return intern_raw(adapter_apply(parse_raw(text, f), f), table, strict);
}

namespace surface {

inline std::string ascii_label(const std::string& label, bool ascii) {
  if (!ascii) return label;
  std::string out;
  std::string_view v = label;
  while (!v.empty()) {
    if (v.substr(0, kArrow.size()) == kArrow) {
      out += kArrowAscii;
      v.remove_prefix(kArrow.size());
    } else if (v.substr(0, kDiamond.size()) == kDiamond) {
      out += kDiamondAscii;
      v.remove_prefix(kDiamond.size());
    } else if (v.substr(0, kBox.size()) == kBox) {
      out += kBoxAscii;
      v.remove_prefix(kBox.size());
    } else {
      out += v.front();
      v.remove_prefix(1);
    }
  }
  return out;
}

inline std::string print_ccg(const RawNode& n) {
  if (n.kids.empty()) return n.label;
  auto wrap = [](const RawNode& k) {
    return k.kids.empty() ? print_ccg(k) : "(" + print_ccg(k) + ")";
  };
  return wrap(n.kids[0]) + n.label + wrap(n.kids[1]);
}

inline std::string print_tlg(const RawNode& n, bool ascii) {
  if (n.kids.empty()) return n.label;
  if (n.kids.size() == 1) return ascii_label(n.label, ascii) + "(" + print_tlg(n.kids[0], ascii) + ")";
  auto wrap = [ascii](const RawNode& k) {
    return k.kids.size() == 2 ? "(" + print_tlg(k, ascii) + ")" : print_tlg(k, ascii);
  };
  return wrap(n.kids[0]) + n.label + wrap(n.kids[1]);
}

inline std::string print_aethel(const RawNode& n, bool ascii) {
  if (n.kids.empty()) return n.label;
  if (n.kids.size() == 1)
    return ascii_label(n.label, ascii) + "(" + print_aethel(n.kids[0], ascii) + ")";
  std::string arrow = ascii ? std::string(" ") + std::string(kArrowAscii) + " "
                            : " " + std::string(kArrow) + " ";
  const RawNode& lhs = n.kids[0];
  std::string left = lhs.kids.size() == 2 ? "(" + print_aethel(lhs, ascii) + ")"
                                          : print_aethel(lhs, ascii);
  return left + arrow + print_aethel(n.kids[1], ascii);
}

}  // namespace surface

// Canonical surface string; inverse adapters are applied first so adapter
// artifacts never leak into output.
inline std::string print_raw(const RawNode& raw, Formalism f, bool ascii = false) {
  RawNode r = adapter_invert(raw, f);
  switch (f) {
    case Formalism::ccg: return surface::print_ccg(r);
    case Formalism::tlg: return surface::print_tlg(r, ascii);
    default: return surface::print_aethel(r, ascii);
  }
}

inline std::string print_category(const CategoryTree& tree, Formalism f, const SymbolTable& table,
                                  bool ascii = false) {
  return print_raw(extern_tree(tree, table), f, ascii);
}

}  // namespace hdcs
