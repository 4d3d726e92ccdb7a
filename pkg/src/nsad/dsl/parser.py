"""Recursive-descent parser for ``.nsr`` rule files.

The grammar is LL(1); every decision is made on the current token alone::

    ruleset := { rule }
    rule    := "rule" IDENT "{" ["describe" STRING] "when" cond
               "effect" expr "params" "{" {pdecl} "}" "}"
    cond    := conj { "or" conj }
    conj    := atom { "and" atom }
    atom    := "not" atom | "(" cond ")" | "present" "(" IDENT ")"
             | IDENT CMP literal
    expr    := term { "+" term }
    term    := factor { "*" factor }
    factor  := "sigmoid" "(" IDENT ";" PREF "," PREF "," PREF ")"
             | "ramp" "(" IDENT ";" PREF "," PREF ")"
             | "linear" "(" IDENT ";" PREF "," PREF ")"
             | "gate" "(" cond ";" PREF ")"
             | "const" "(" PREF ")"
    pdecl   := IDENT "=" NUMBER ["in" "[" NUMBER "," NUMBER "]"] ["frozen"]
"""

from __future__ import annotations

from nsad.dsl import nodes as n
from nsad.dsl.lexer import ParseError, Token, tokenize, unescape

_FACTOR_KEYWORDS = ("sigmoid", "ramp", "linear", "gate", "const")


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    # -- token helpers -------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("keyword", "punct", "op") and t.text == text

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def fail(self, *expected: str, message: str = ""):
        t = self.tok
        raise ParseError(message or f"unexpected {t.describe()}", t.line, t.col, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        return self.advance()

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            self.fail(what)
        return self.advance()

    def expect_number(self) -> float:
        if self.tok.kind != "number":
            self.fail("number")
        return float(self.advance().text)

    @staticmethod
    def pos(t: Token) -> n.Pos:
        return n.Pos(t.line, t.col)

    # -- productions ---------------------------------------------------------

    def ruleset(self) -> list:
        rules = []
        while self.tok.kind != "eof":
            if not self.at("rule"):
                self.fail("'rule'", "end of input")
            rules.append(self.rule())
        return rules

    def rule(self) -> n.Rule:
        start = self.expect("rule")
        rid = self.expect_ident("rule id").text
        self.expect("{")
        description = ""
        if self.at("describe"):
            self.advance()
            if self.tok.kind != "string":
                self.fail("string")
            description = unescape(self.advance().text[1:-1])
        self.expect("when")
        cond = self.cond()
        self.expect("effect")
        effect = self.expr()
        self.expect("params")
        self.expect("{")
        params = []
        while self.tok.kind == "ident":
            params.append(self.pdecl())
        if not self.at("}"):
            self.fail("parameter name", "'}'")
        self.advance()
        self.expect("}")
        return n.Rule(
            id=rid,
            condition=cond,
            effect=effect,
            params=tuple(params),
            description=description,
            pos=self.pos(start),
        )

    def cond(self):
        items = [self.conj()]
        while self.at("or"):
            self.advance()
            items.append(self.conj())
        return items[0] if len(items) == 1 else n.Or(tuple(items))

    def conj(self):
        items = [self.atom()]
        while self.at("and"):
            self.advance()
            items.append(self.atom())
        return items[0] if len(items) == 1 else n.And(tuple(items))

    def atom(self):
        t = self.tok
        if self.at("not"):
            self.advance()
            return n.Not(self.atom())
        if self.at("("):
            self.advance()
            inner = self.cond()
            self.expect(")")
            return inner
        if self.at("present"):
            self.advance()
            self.expect("(")
            feature = self.expect_ident("feature name").text
            self.expect(")")
            return n.Present(feature, pos=self.pos(t))
        if t.kind == "ident":
            feature = self.advance().text
            if self.tok.kind != "op":
                self.fail("comparison operator")
            op = self.advance().text
            lit = self.tok
            if lit.kind == "number":
                literal = float(lit.text)
            elif lit.kind == "string":
                literal = unescape(lit.text[1:-1])
            else:
                self.fail("number", "string")
            self.advance()
            return n.Compare(feature, op, literal, pos=self.pos(t))
        self.fail("'not'", "'('", "'present'", "feature name")

    def expr(self) -> n.Effect:
        terms = [self.term()]
        while self.at("+"):
            self.advance()
            terms.append(self.term())
        return n.Effect(tuple(terms))

    def term(self) -> n.Term:
        factors = [self.factor()]
        while self.at("*"):
            self.advance()
            factors.append(self.factor())
        return n.Term(tuple(factors))

    def _prefs(self, keyword: str, start: Token) -> list:
        refs = [self.expect_ident("parameter name").text]
        while self.at(","):
            self.advance()
            refs.append(self.expect_ident("parameter name").text)
        if not self.at(")"):
            self.fail("','", "')'")
        arity = n.ARITY[keyword]
        if len(refs) != arity:
            raise ParseError(
                f"{keyword} takes {arity} parameter reference{'s' if arity > 1 else ''}, got {len(refs)}",
                start.line,
                start.col,
            )
        self.advance()
        return refs

    def factor(self):
        start = self.tok
        if start.kind != "keyword" or start.text not in _FACTOR_KEYWORDS:
            self.fail(*(repr(k) for k in _FACTOR_KEYWORDS))
        kw = self.advance().text
        p = self.pos(start)
        self.expect("(")
        if kw == "const":
            (ref,) = self._prefs(kw, start)
            return n.Const(ref, pos=p)
        if kw == "gate":
            cond = self.cond()
            self.expect(";")
            (ref,) = self._prefs(kw, start)
            return n.Gate(cond, ref, pos=p)
        feature = self.expect_ident("feature name").text
        self.expect(";")
        refs = self._prefs(kw, start)
        if kw == "sigmoid":
            return n.Sigmoid(feature, *refs, pos=p)
        if kw == "ramp":
            return n.Ramp(feature, *refs, pos=p)
        return n.Linear(feature, *refs, pos=p)

    def pdecl(self) -> n.ParamDecl:
        t = self.advance()
        self.expect("=")
        init = self.expect_number()
        bounds = None
        if self.at("in"):
            self.advance()
            self.expect("[")
            lo = self.expect_number()
            self.expect(",")
            hi = self.expect_number()
            self.expect("]")
            bounds = (lo, hi)
        frozen = False
        if self.at("frozen"):
            self.advance()
            frozen = True
        return n.ParamDecl(t.text, init, bounds, frozen, pos=self.pos(t))


def parse_rules(source: str) -> list:
    """Parse source into a list of rules without any schema checks."""
    return _Parser(source).ruleset()
