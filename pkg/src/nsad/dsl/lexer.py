from __future__ import annotations

import re
from dataclasses import dataclass

KEYWORDS = frozenset(
    {
        "rule", "describe", "when", "effect", "params",
        "and", "or", "not", "present",
        "sigmoid", "ramp", "linear", "gate", "const",
        "in", "frozen",
    }
)

# order matters: two-character operators before their one-character prefixes
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<punct>[{}()\[\];,+*=])
    """,
    re.VERBOSE,
)


class RuleError(ValueError):
    """Base class for anything wrong with rule source."""


class ParseError(RuleError):
    def __init__(self, message: str, line: int, col: int, expected=()):
        self.line = line
        self.col = col
        self.expected = tuple(expected)
        self.bare_message = message
        text = f"{line}:{col}: {message}"
        if self.expected:
            text += " (expected " + ", ".join(self.expected) + ")"
        super().__init__(text)


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "keyword", "number", "string", "op", "punct", "eof"
    text: str
    line: int
    col: int

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        return repr(self.text)


def unescape(body: str) -> str:
    out = []
    it = iter(body)
    for ch in it:
        if ch == "\\":
            nxt = next(it)
            out.append({"n": "\n", "t": "\t"}.get(nxt, nxt))
        else:
            out.append(ch)
    return "".join(out)


def quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


def tokenize(source: str) -> list:
    tokens = []
    line, line_start, i = 1, 0, 0
    n = len(source)
    while i < n:
        m = _TOKEN_RE.match(source, i)
        col = i - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {source[i]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "ident" and text in KEYWORDS:
            kind = "keyword"
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = i + text.rindex("\n") + 1
        i = m.end()
    tokens.append(Token("eof", "", line, n - line_start + 1))
    return tokens
