"""Grammar-driven generator of random, valid rule sources and matching records.

Sources are emitted as text (with random layout, comments and redundant
parentheses) so the parser is exercised on its real input language.
"""

import random

NUMERIC_RANGES = {"age": (50.0, 95.0), "bmi": (15.0, 40.0), "mmse": (10.0, 30.0), "edu": (0.0, 20.0)}
LEVELS = {"sex": ["F", "M"], "smoker": ["yes", "no", "former"]}
SCHEMA = {**{k: "numeric" for k in NUMERIC_RANGES}, **{k: "categorical" for k in LEVELS}}
DESCRIPTIONS = ["", "risk factor", 'says "hi"', "back\\slash", "tab\there", "multi\nline", "plain text 42"]


def fmt_num(rng: random.Random, x: float) -> str:
    style = rng.randrange(4)
    if style == 0:
        return repr(float(x))
    if style == 1:
        return f"{x:.3f}"
    if style == 2:
        return f"{x:.4e}"
    return str(int(round(x))) if abs(x) < 1e6 else repr(x)


def _ws(rng: random.Random) -> str:
    return rng.choice([" ", " ", "  ", "\n", "\n  ", "\t", " # note\n "])


class _RuleText:
    def __init__(self, rng: random.Random, rid: str):
        self.rng = rng
        self.rid = rid
        self.decls = []  # text of each param declaration
        self.n = 0

    def param(self, init_lo, init_hi, lo=None, hi=None, frozen_p=0.1, kind="p", bounds_p=0.3) -> str:
        rng = self.rng
        name = f"{kind}{self.n}"
        self.n += 1
        init = rng.uniform(init_lo, init_hi)
        text = f"{name} = {fmt_num(rng, init)}"
        # the formatted literal is what the parser sees; bounds must contain it
        init = float(text.split("=", 1)[1])
        if lo is not None or rng.random() < bounds_p:
            blo = lo if lo is not None else init - rng.uniform(0.0, 5.0)
            bhi = hi if hi is not None else init + rng.uniform(0.0, 5.0)
            blo_t = repr(float(lo)) if lo is not None else fmt_num(rng, blo)
            bhi_t = repr(float(hi)) if hi is not None else fmt_num(rng, bhi)
            if float(blo_t) > init:
                blo_t = repr(init)
            if float(bhi_t) < init:
                bhi_t = repr(init)
            text += f" in [{blo_t}, {bhi_t}]"
        if rng.random() < frozen_p:
            text += " frozen"
        self.decls.append(text)
        return name

    def atom(self, depth: int) -> str:
        rng = self.rng
        r = rng.random()
        if depth > 0 and r < 0.15:
            return "not " + self.atom(depth - 1)
        if depth > 0 and r < 0.3:
            return "(" + self.cond(depth - 1) + ")"
        if r < 0.45:
            return f"present({rng.choice(list(SCHEMA))})"
        if r < 0.8:
            f = rng.choice(list(NUMERIC_RANGES))
            lo, hi = NUMERIC_RANGES[f]
            op = rng.choice(["==", "!=", "<", "<=", ">", ">="])
            lit = rng.uniform(lo, hi) if op not in ("==", "!=") else float(rng.randint(int(lo), int(hi)))
            return f"{f} {op} {fmt_num(rng, lit)}"
        f = rng.choice(list(LEVELS))
        return f'{f} {rng.choice(["==", "!="])} "{rng.choice(LEVELS[f])}"'

    def cond(self, depth: int = 2) -> str:
        rng = self.rng
        conjs = []
        for _ in range(rng.choice([1, 1, 2, 3])):
            atoms = [self.atom(depth) for _ in range(rng.choice([1, 1, 2, 3]))]
            conjs.append(" and ".join(atoms))
        return " or ".join(conjs)

    def factor(self) -> str:
        rng = self.rng
        kind = rng.choice(["sigmoid", "sigmoid", "ramp", "linear", "gate", "const"])
        if kind in ("sigmoid", "ramp", "linear"):
            f = rng.choice(list(NUMERIC_RANGES))
            lo, hi = NUMERIC_RANGES[f]
        if kind == "sigmoid":
            a = self.param(-3.0, 3.0, kind="a")
            t = self.param(lo, hi, kind="T")
            tau_lo = rng.choice([None, 0.1, 0.5])
            tau = self.param(0.5, 12.0, lo=tau_lo, hi=None if tau_lo is None else 50.0, kind="tau", bounds_p=0.0)
            return f"sigmoid({f}; {a}, {t}, {tau})"
        if kind == "ramp":
            b = self.param(-0.2, 0.2, kind="b")
            t = self.param(lo, hi, kind="T")
            return f"ramp({f};{b},{t})"
        if kind == "linear":
            a = self.param(-0.08, 0.08, kind="s")
            b = self.param(-1.0, 1.0, kind="c")
            return f"linear( {f} ; {a} , {b} )"
        if kind == "gate":
            g = self.param(-2.0, 2.0, kind="g")
            return f"gate({self.cond(1)}; {g})"
        c = self.param(-2.0, 2.0, kind="k")
        return f"const({c})"

    def render(self) -> str:
        rng = self.rng
        cond = self.cond()
        terms = []
        for _ in range(rng.choice([1, 1, 2, 3])):
            terms.append(" * ".join(self.factor() for _ in range(rng.choice([1, 1, 2]))))
        effect = " + ".join(terms)
        ws = lambda: _ws(rng)  # noqa: E731
        desc = ""
        d = rng.choice(DESCRIPTIONS)
        if d or rng.random() < 0.2:
            desc = "describe " + quote(d) + ws()
        # declaration order is shuffled: references resolve by name
        decls = list(self.decls)
        rng.shuffle(decls)
        return (
            f"rule {self.rid}{ws()}{{{ws()}{desc}when {cond}{ws()}effect {effect}{ws()}"
            f"params {{{ws()}{ws().join(decls)}{ws()}}}{ws()}}}"
        )


def quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


def random_source(rng: random.Random, max_rules: int = 5) -> str:
    n = rng.randint(0, max_rules)
    parts = []
    if rng.random() < 0.3:
        parts.append("# generated ruleset\n")
    for k in range(n):
        parts.append(_RuleText(rng, f"r{k}_{rng.choice(['age', 'bp', 'x', 'edu'])}").render())
        parts.append(rng.choice(["\n", "\n\n", " ", "\n# sep\n"]))
    return "".join(parts)


def random_record(rng: random.Random, missing: float = 0.2) -> dict:
    feats = {}
    for f, (lo, hi) in NUMERIC_RANGES.items():
        if rng.random() >= missing:
            v = rng.uniform(lo, hi)
            feats[f] = float(round(v)) if rng.random() < 0.3 else v
    for f, levels in LEVELS.items():
        if rng.random() >= missing:
            feats[f] = rng.choice(levels)
    return feats
