"""Text formats for rules and CNF input, plus the CNF -> implicative-form converter.

Rule file grammar (one statement per line, ``#`` starts a comment)::

    VOCAB <n>
    RULE <id> [WHEN <literal> (AND <literal>)*] THEN <code> = <alpha>

    literal := [NOT] cur[<code>] | [NOT] past[<tc>][<code>]
    tc      := comma list of integers and/or ``*``

CNF file grammar::

    VOCAB <n>                      (optional)
    VAR <name> cur <code>
    VAR <name> past[<tc>] <code>
    CLAUSE <lit> <lit> ...         lit := [+|-]<name>
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .rules import Literal, Rule, RuleSet, Scope, TemporalComponent

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<punct>[\[\],=*])
  | (?P<word>[A-Za-z_][A-Za-z0-9_.:\-]*)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    """,
    re.VERBOSE,
)


class DslSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks: list[_Tok], lineno: int, line_len: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.end_col = line_len + 1

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def error(self, msg: str, tok: _Tok | None = None) -> DslSyntaxError:
        tok = tok if tok is not None else self.peek()
        return DslSyntaxError(msg, self.lineno, tok.col if tok else self.end_col)

    def next(self, what: str) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise self.error(f"expected {what}, got end of line")
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.next(repr(text))
        if tok.text != text:
            raise self.error(f"expected {text!r}, got {tok.text!r}", tok)
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.text == text:
            self.i += 1
            return True
        return False

    def integer(self, what: str) -> tuple[int, _Tok]:
        tok = self.next(what)
        if tok.kind != "number" or not re.fullmatch(r"[+-]?\d+", tok.text):
            raise self.error(f"expected {what}, got {tok.text!r}", tok)
        return int(tok.text), tok

    def done(self) -> None:
        tok = self.peek()
        if tok is not None:
            raise self.error(f"unexpected trailing token {tok.text!r}", tok)


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].rstrip()


def _parse_tc(cur: _Cursor) -> TemporalComponent:
    cur.expect("[")
    items: list[int | str] = []
    while True:
        tok = cur.peek()
        if tok is not None and tok.text == "*":
            cur.next("'*'")
            items.append("*")
        else:
            value, tok = cur.integer("temporal index")
            if value == 0:
                raise cur.error("temporal index 0 is not allowed", tok)
            items.append(value)
        if not cur.accept(","):
            break
    cur.expect("]")
    return TemporalComponent.of(*items)


def _parse_code(cur: _Cursor, vocab: int) -> int:
    cur.expect("[")
    code, tok = cur.integer("code index")
    if not 0 <= code < vocab:
        raise cur.error(f"code {code} outside vocabulary [0, {vocab})", tok)
    cur.expect("]")
    return code


def _parse_literal(cur: _Cursor, vocab: int) -> tuple[Literal, TemporalComponent | None]:
    negated = cur.accept("NOT")
    head = cur.next("'cur' or 'past'")
    if head.text == "cur":
        return Literal(Scope.CURRENT, _parse_code(cur, vocab), negated), None
    if head.text == "past":
        tc = _parse_tc(cur)
        return Literal(Scope.HISTORY, _parse_code(cur, vocab), negated), tc
    raise cur.error(f"expected 'cur' or 'past', got {head.text!r}", head)


def _parse_rule(cur: _Cursor, vocab: int) -> Rule:
    id_tok = cur.next("rule id")
    if id_tok.kind != "word" or id_tok.text in ("WHEN", "THEN"):
        raise cur.error(f"expected rule id, got {id_tok.text!r}", id_tok)
    antecedent: list[Literal] = []
    tc = TemporalComponent()
    if cur.accept("WHEN"):
        while True:
            lit, lit_tc = _parse_literal(cur, vocab)
            antecedent.append(lit)
            if lit_tc is not None:
                tc = tc | lit_tc
            if not cur.accept("AND"):
                break
    cur.expect("THEN")
    out, out_tok = cur.integer("output code")
    if not 0 <= out < vocab:
        raise cur.error(f"code {out} outside vocabulary [0, {vocab})", out_tok)
    cur.expect("=")
    alpha_tok = cur.next("alpha")
    if alpha_tok.kind != "number":
        raise cur.error(f"expected alpha, got {alpha_tok.text!r}", alpha_tok)
    alpha = float(alpha_tok.text)
    if not 0.0 <= alpha <= 1.0:
        raise cur.error(f"alpha {alpha_tok.text} out of range [0, 1]", alpha_tok)
    cur.done()
    return Rule(id=id_tok.text, output_code=out, alpha=alpha, antecedent=tuple(antecedent), temporal=tc)


def parse_rules(text: str) -> RuleSet:
    vocab: int | None = None
    rules: list[Rule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        cur = _Cursor(_tokenize(line, lineno), lineno, len(line))
        head = cur.next("statement")
        if head.text == "VOCAB":
            if vocab is not None:
                raise cur.error("duplicate VOCAB declaration", head)
            vocab, tok = cur.integer("vocabulary size")
            if vocab < 1:
                raise cur.error("vocabulary size must be positive", tok)
            cur.done()
        elif head.text == "RULE":
            if vocab is None:
                raise cur.error("RULE before VOCAB declaration", head)
            rules.append(_parse_rule(cur, vocab))
        else:
            raise cur.error(f"expected VOCAB or RULE, got {head.text!r}", head)
    if vocab is None:
        raise DslSyntaxError("missing VOCAB declaration", max(1, len(text.splitlines())), 1)
    return RuleSet(tuple(rules), vocab)


def format_literal(lit: Literal, tc: TemporalComponent) -> str:
    neg = "NOT " if lit.negated else ""
    if lit.scope is Scope.CURRENT:
        return f"{neg}cur[{lit.code}]"
    return f"{neg}past[{','.join(tc.tokens())}][{lit.code}]"


def format_rule(rule: Rule) -> str:
    parts = [f"RULE {rule.id}"]
    if rule.antecedent:
        parts.append("WHEN " + " AND ".join(format_literal(l, rule.temporal) for l in rule.antecedent))
    parts.append(f"THEN {rule.output_code} = {rule.alpha!r}")
    return " ".join(parts)


def serialize_rules(rules: RuleSet) -> str:
    lines = [f"VOCAB {rules.vocab_size}"]
    lines.extend(format_rule(r) for r in rules)
    return "\n".join(lines) + "\n"


def read_rules(path: str | Path) -> RuleSet:
    return parse_rules(Path(path).read_text(encoding="utf-8"))


def write_rules(rules: RuleSet, path: str | Path) -> None:
    Path(path).write_text(serialize_rules(rules), encoding="utf-8")


def read_vocab_names(path: str | Path) -> dict[str, int]:
    """Sidecar ``<index> <name>`` file mapping code names to indices."""
    names: dict[str, int] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = _strip_comment(raw).strip()
        if line:
            idx, name = line.split(None, 1)
            names[name.strip()] = int(idx)
    return names


# --- CNF input -------------------------------------------------------------


@dataclass(frozen=True)
class CnfVar:
    name: str
    scope: Scope
    code: int
    temporal: TemporalComponent = TemporalComponent()


@dataclass(frozen=True)
class CnfExpr:
    """Conjunction of clauses; each clause is a tuple of ``(var name, negated)``."""

    clauses: tuple[tuple[tuple[str, bool], ...], ...]
    variables: Mapping[str, CnfVar] = field(default_factory=dict)
    vocab_size: int | None = None

    def __post_init__(self) -> None:
        clauses = tuple(tuple((str(n), bool(neg)) for n, neg in c) for c in self.clauses)
        if not clauses:
            raise ValueError("CNF expression needs at least one clause")
        if any(not c for c in clauses):
            raise ValueError("CNF clauses must be nonempty")
        object.__setattr__(self, "clauses", clauses)


def parse_cnf(text: str) -> CnfExpr:
    variables: dict[str, CnfVar] = {}
    clauses: list[tuple[tuple[str, bool], ...]] = []
    vocab: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        words = line.split()
        col = line.index(words[0]) + 1
        head = words[0]
        if head == "VOCAB":
            if len(words) != 2 or not words[1].isdigit():
                raise DslSyntaxError("expected VOCAB <n>", lineno, col)
            vocab = int(words[1])
        elif head == "VAR":
            m = re.fullmatch(r"\s*VAR\s+(\S+)\s+(cur|past\[[^\]]*\])\s+(\d+)\s*", line)
            if m is None:
                raise DslSyntaxError("expected VAR <name> <cur|past[tc]> <code>", lineno, col)
            name, scope_text, code = m.group(1), m.group(2), int(m.group(3))
            if name in variables:
                raise DslSyntaxError(f"variable {name!r} declared twice", lineno, col)
            if scope_text == "cur":
                variables[name] = CnfVar(name, Scope.CURRENT, code)
            else:
                sub = scope_text[len("past"):]
                tc = _parse_tc(_Cursor(_tokenize(sub, lineno), lineno, len(sub)))
                variables[name] = CnfVar(name, Scope.HISTORY, code, tc)
            if vocab is not None and code >= vocab:
                raise DslSyntaxError(f"code {code} outside vocabulary [0, {vocab})", lineno, col)
        elif head == "CLAUSE":
            lits = []
            for w in words[1:]:
                neg = w.startswith("-")
                name = w.lstrip("+-")
                if not name:
                    raise DslSyntaxError(f"bad literal {w!r}", lineno, line.index(w) + 1)
                lits.append((name, neg))
            if not lits:
                raise DslSyntaxError("empty clause", lineno, col)
            clauses.append(tuple(lits))
        else:
            raise DslSyntaxError(f"expected VOCAB, VAR or CLAUSE, got {head!r}", lineno, col)
    if not clauses:
        raise DslSyntaxError("no clauses", max(1, len(text.splitlines())), 1)
    return CnfExpr(tuple(clauses), variables, vocab)


def cnf_to_cif(expr: CnfExpr, id_prefix: str = "c") -> list[Rule]:
    """One implicative rule per clause: negate every literal but the consequent.

    The consequent is the clause's last literal; a negated consequent becomes an
    ``alpha = 0`` rule.  Rules output current-visit codes only, so if the last
    literal is a history variable the last current-visit literal is used instead.
    """
    rules = []
    for k, clause in enumerate(expr.clauses):
        resolved = []
        for name, neg in clause:
            if name not in expr.variables:
                raise KeyError(f"clause {k + 1} references unmapped variable {name!r}")
            resolved.append((expr.variables[name], neg))
        pick = len(resolved) - 1
        while pick >= 0 and resolved[pick][0].scope is not Scope.CURRENT:
            pick -= 1
        if pick < 0:
            raise ValueError(f"clause {k + 1} has no current-visit literal to use as consequent")
        tcs = {v.temporal for v, _ in resolved if v.scope is Scope.HISTORY}
        if len(tcs) > 1:
            raise ValueError(f"clause {k + 1} mixes history variables with different temporal components")
        tc = tcs.pop() if tcs else TemporalComponent()
        out_var, out_neg = resolved[pick]
        antecedent = tuple(
            Literal(v.scope, v.code, not neg) for i, (v, neg) in enumerate(resolved) if i != pick
        )
        rules.append(
            Rule(
                id=f"{id_prefix}{k + 1}",
                output_code=out_var.code,
                alpha=0.0 if out_neg else 1.0,
                antecedent=antecedent,
                temporal=tc,
            )
        )
    return rules


def cnf_vocab_size(expr: CnfExpr) -> int:
    if expr.vocab_size is not None:
        return expr.vocab_size
    return max((v.code for v in expr.variables.values()), default=0) + 1


def serialize_cnf(expr: CnfExpr) -> str:
    lines = [] if expr.vocab_size is None else [f"VOCAB {expr.vocab_size}"]
    for v in expr.variables.values():
        scope = "cur" if v.scope is Scope.CURRENT else f"past[{','.join(v.temporal.tokens())}]"
        lines.append(f"VAR {v.name} {scope} {v.code}")
    for clause in expr.clauses:
        lines.append("CLAUSE " + " ".join(("-" if neg else "+") + n for n, neg in clause))
    return "\n".join(lines) + "\n"
