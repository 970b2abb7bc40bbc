#include <catch2/catch_amalgamated.hpp>

#include "hdcs/category.hpp"
#include "hdcs/formalism.hpp"

using namespace hdcs;

TEST_CASE("heap position laws") {
  for (std::uint64_t k = 1; k <= 1024; ++k) {
    Position p{k};
    CHECK(p.left().parent() == p);
    CHECK(p.right().parent() == p);
    CHECK(p.left().depth() == p.depth() + 1);
    CHECK(p.right().depth() == p.depth() + 1);
  }
  CHECK(Position{1}.depth() == 0);
  CHECK(Position{7}.depth() == 2);
}

TEST_CASE("path factor order reads the position bits least significant first") {
  CHECK(Position{12}.path_bits() == std::vector<int>{0, 0, 1, 1});
  CHECK(Position{2}.path_bits() == std::vector<int>{0, 1});
  CHECK(Position{1}.path_bits() == std::vector<int>{1});
  CHECK(Position{3}.path_bits() == std::vector<int>{1, 1});
}

TEST_CASE("ccg parsing matches the drawn convention") {
  SymbolTable table;
  CategoryTree is = parse_category("(S[dcl]\\NP)/NP", Formalism::ccg, table);
  REQUIRE(is.arity() == 2);
  CHECK(table.at(is.symbol()).name == "/");
  CHECK(table.at(is.left().symbol()).name == "\\");
  CHECK(table.at(is.right().symbol()).name == "NP");
  CHECK(table.at(is.left().left().symbol()).name == "S[dcl]");
  CHECK(table.at(is.left().right().symbol()).name == "NP");

  CategoryTree np = parse_category("NP", Formalism::ccg, table);
  CHECK(np.arity() == 0);
  CHECK(table.at(np.symbol()).name == "NP");
}

TEST_CASE("ccg printing is canonical") {
  SymbolTable table;
  CHECK(print_category(parse_category("N", Formalism::ccg, table), Formalism::ccg, table) == "N");
  CHECK(print_category(parse_category("NP/N", Formalism::ccg, table), Formalism::ccg, table) ==
        "NP/N");
  CHECK(print_category(parse_category("( S[dcl] \\ NP ) / NP", Formalism::ccg, table),
                       Formalism::ccg, table) == "(S[dcl]\\NP)/NP");
}

TEST_CASE("bfs enumeration uses heap numbering in level order") {
  SymbolTable table;
  SECTION("single leaf") {
    auto out = bfs_enumerate(parse_category("NP", Formalism::ccg, table));
    REQUIRE(out.size() == 1);
    CHECK(out[0].first.k == 1);
    CHECK(table.at(out[0].second).name == "NP");
  }
  SECTION("one operator") {
    auto out = bfs_enumerate(parse_category("NP/N", Formalism::ccg, table));
    REQUIRE(out.size() == 3);
    CHECK(out[0].first.k == 1);
    CHECK(out[1].first.k == 2);
    CHECK(out[2].first.k == 3);
  }
  SECTION("two levels") {
    auto out = bfs_enumerate(parse_category("(S[dcl]\\NP)/NP", Formalism::ccg, table));
    REQUIRE(out.size() == 5);
    std::vector<std::uint64_t> pos;
    std::vector<std::string> names;
    for (auto& [p, s] : out) {
      pos.push_back(p.k);
      names.push_back(table.at(s).name);
    }
    CHECK(pos == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(names == std::vector<std::string>{"/", "\\", "NP", "S[dcl]", "NP"});
    for (std::size_t i = 1; i < pos.size(); ++i) CHECK(pos[i] > pos[i - 1]);
  }
}

TEST_CASE("fringe successors follow the heap rule") {
  SECTION("binary root") {
    Fringe f{{0, Position{1}}};
    Fringe next = fringe_successors(f, {2});
    REQUIRE(next.size() == 2);
    CHECK(next[0] == FringeEntry{0, Position{2}});
    CHECK(next[1] == FringeEntry{0, Position{3}});
  }
  SECTION("zeroary root gives the fix-point") {
    Fringe f{{0, Position{1}}};
    CHECK(fringe_successors(f, {0}).empty());
  }
  SECTION("mixed trees") {
    Fringe f{{0, Position{3}}, {1, Position{2}}};
    Fringe next = fringe_successors(f, {2, 2});
    REQUIRE(next.size() == 4);
    CHECK(next[0] == FringeEntry{0, Position{6}});
    CHECK(next[1] == FringeEntry{0, Position{7}});
    CHECK(next[2] == FringeEntry{1, Position{4}});
    CHECK(next[3] == FringeEntry{1, Position{5}});
  }
}

TEST_CASE("iterating gold fringes terminates after depth+1 steps") {
  SymbolTable table;
  CategoryTree t = parse_category("((A/B)\\C)/(D/E)", Formalism::ccg, table);
  Fringe fringe = initial_fringe(1);
  int steps = 0;
  while (!fringe.empty()) {
    std::vector<int> arities;
    for (auto& e : fringe) arities.push_back(table.at(symbol_at(t, e.pos)).arity);
    fringe = fringe_successors(fringe, arities);
    ++steps;
  }
  CHECK(steps == t.depth() + 1);
}

TEST_CASE("tlg unary binarization") {
  SECTION("unary modality becomes a pseudo-binary with the artificial right slot") {
    RawNode raw = parse_raw("◇(np)", Formalism::tlg);
    RawNode bin = binarize_unary_tlg(raw);
    REQUIRE(bin.kids.size() == 2);
    CHECK(bin.label == "◇");
    CHECK(bin.kids[0].label == "np");
    CHECK(bin.kids[1].label == std::string(surface::kArtTerminal));
    CHECK(debinarize_unary_tlg(bin) == raw);
  }
  SECTION("trees without unary nodes are unchanged") {
    RawNode raw = parse_raw("np\\0s", Formalism::tlg);
    CHECK(binarize_unary_tlg(raw) == raw);
  }
  SECTION("modes and nesting round-trip") {
    RawNode raw = parse_raw("□1(np/0n)\\2◇0(s)", Formalism::tlg);
    CHECK(debinarize_unary_tlg(binarize_unary_tlg(raw)) == raw);
  }
}

TEST_CASE("aethel modality merging matches the pictured canvas") {
  SymbolTable table;
  SECTION("'is' category") {
    CategoryTree t = parse_category("◇obj1(np) ⊸ ◇su(vnw) ⊸ s_main",
                                    Formalism::aethel, table);
    REQUIRE(t.arity() == 2);
    CHECK(table.at(t.symbol()).name == "⊸◇obj1");
    CHECK(table.at(t.left().symbol()).name == "np");
    CHECK(table.at(t.right().symbol()).name == "⊸◇su");
    CHECK(table.at(t.right().left().symbol()).name == "vnw");
    CHECK(table.at(t.right().right().symbol()).name == "s_main");
  }
  SECTION("'een' category") {
    CategoryTree t = parse_category("□det(n ⊸ np)", Formalism::aethel, table);
    REQUIRE(t.arity() == 2);
    CHECK(table.at(t.symbol()).name == "□det⊸");
    CHECK(table.at(t.left().symbol()).name == "n");
    CHECK(table.at(t.right().symbol()).name == "np");
  }
  SECTION("unfusable markers raise MarkerPlacement") {
    CHECK_THROWS_AS(parse_category("◇su(np)", Formalism::aethel, table), MarkerPlacement);
    CHECK_THROWS_AS(parse_category("□det(np)", Formalism::aethel, table), MarkerPlacement);
  }
}

TEST_CASE("ascii fallbacks parse and print") {
  SymbolTable table;
  CategoryTree t = parse_category("dia:su(vnw) -o s_main", Formalism::aethel, table);
  CHECK(table.at(t.symbol()).name == "⊸◇su");
  CHECK(print_category(t, Formalism::aethel, table, /*ascii=*/true) ==
        "dia:su(vnw) -o s_main");
  CHECK(print_category(t, Formalism::aethel, table, /*ascii=*/false) ==
        "◇su(vnw) ⊸ s_main");

  CategoryTree u = parse_category("box:1(np)", Formalism::tlg, table);
  CHECK(print_category(u, Formalism::tlg, table, /*ascii=*/true) == "box:1(np)");
}

TEST_CASE("syntax errors carry byte offsets; strict mode rejects unknown atoms") {
  SymbolTable table;
  try {
    parse_category("NP/(N", Formalism::ccg, table);
    FAIL("expected SyntaxError");
  } catch (const SyntaxError& e) {
    CHECK(e.offset == 5);  // after the unclosed group's last byte
  }
  CHECK_THROWS_AS(parse_category("NP//N", Formalism::ccg, table), SyntaxError);

  SymbolTable closed;
  closed.add("NP", 0);
  closed.add("/", 2);
  CHECK_NOTHROW(parse_category("NP/NP", Formalism::ccg, closed, /*strict=*/true));
  CHECK_THROWS_AS(parse_category("NP/N", Formalism::ccg, closed, /*strict=*/true), UnknownSymbol);
}

TEST_CASE("category trees compare structurally and report depth") {
  SymbolTable table;
  CategoryTree a = parse_category("(S\\NP)/NP", Formalism::ccg, table);
  CategoryTree b = parse_category("(S\\NP)/NP", Formalism::ccg, table);
  CategoryTree c = parse_category("S\\(NP/NP)", Formalism::ccg, table);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.depth() == 2);
  CHECK(a.node_count() == 5);
  CHECK(parse_category("NP", Formalism::ccg, table).depth() == 0);
}
