"""Parser for the word/polynomial expression mini-grammar.

    atom  := "x(" j ")" | "xl(" i "," j "," t ")" | "u(" i "," t ")"
           | "u*(" i "," t ")" | "ut(" i "," t ")" | "ut*(" i "," t ")"
           | "v(" i "," t ")" | "v*(" i "," t ")" | "y(" i "," t ")"
           | "yinv(" i "," t ")"
    term  := complex-literal "*" atom ("*" atom)*
    poly  := term ("+" term)*

Complex literals follow the "a+bi" shape (plain reals and a bare leading
sign are accepted; the coefficient may be omitted entirely).  Whitespace is
ignored.
"""

from __future__ import annotations

import re

from .algebra import NCPoly, u, ut, v, x, xl, y_coord, y_inv

__all__ = ["parse_poly", "parse_atom", "ExpressionError"]


class ExpressionError(ValueError):
    """Malformed expression text."""


_ATOM_RE = re.compile(r"(x|xl|u\*|u|ut\*|ut|v\*|v|yinv|y)\(([^()]*)\)$")


def _atom_poly(name: str, args: list[float]) -> NCPoly:
    def need(k):
        if len(args) != k:
            raise ExpressionError(f"atom {name!r} expects {k} arguments, got {len(args)}")

    if name == "x":
        need(1)
        return NCPoly.from_letter(x(int(args[0])))
    if name == "xl":
        need(3)
        return NCPoly.from_letter(xl(int(args[0]), int(args[1]), args[2]))
    if name in ("u", "u*"):
        need(2)
        return NCPoly.from_letter(u(int(args[0]), args[1], star=name.endswith("*")))
    if name in ("ut", "ut*"):
        need(2)
        return NCPoly.from_letter(ut(int(args[0]), args[1], star=name.endswith("*")))
    if name in ("v", "v*"):
        need(2)
        return NCPoly.from_letter(v(int(args[0]), args[1], star=name.endswith("*")))
    if name == "y":
        need(2)
        return y_coord(int(args[0]), args[1])
    if name == "yinv":
        need(2)
        return y_inv(int(args[0]), args[1])
    raise ExpressionError(f"unknown atom {name!r}")


def parse_atom(text: str) -> NCPoly:
    text = text.strip()
    m = _ATOM_RE.match(text)
    if not m:
        raise ExpressionError(f"malformed atom {text!r}")
    name, body = m.group(1), m.group(2).strip()
    args = []
    if body:
        for part in body.split(","):
            part = part.strip()
            try:
                args.append(float(part))
            except ValueError as exc:
                raise ExpressionError(f"bad number {part!r} in atom {text!r}") from exc
    return _atom_poly(name, args)


def _parse_coeff(text: str) -> complex:
    text = text.strip().replace(" ", "")
    if not text or text == "+":
        return 1.0 + 0j
    if text == "-":
        return -1.0 + 0j
    try:
        return complex(text.replace("i", "j"))
    except ValueError as exc:
        raise ExpressionError(f"bad complex literal {text!r}") from exc


def _split_terms(text: str):
    """Split on top-level +/- signs, keeping each term's sign attached."""
    terms = []
    depth = 0
    start = 0
    for k, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ExpressionError("unbalanced parentheses")
        elif ch in "+-" and depth == 0 and k > start:
            prev = text[k - 1]
            if prev in "eE" and k >= 2 and (text[k - 2].isdigit() or text[k - 2] == "."):
                continue  # exponent sign inside a float literal
            terms.append(text[start:k])
            start = k
    if depth:
        raise ExpressionError("unbalanced parentheses")
    terms.append(text[start:])
    return [t for t in terms if t.strip()]


def parse_poly(text: str) -> NCPoly:
    """Parse a polynomial expression into an NCPoly."""
    text = text.strip()
    if not text:
        raise ExpressionError("empty expression")
    out = NCPoly.zero()
    for term in _split_terms(text):
        factors = _split_factors(term)
        coeff_text = ""
        atoms = []
        for k, f in enumerate(factors):
            f = f.strip()
            if k == 0 and not _ATOM_RE.match(f.lstrip("+-").strip()):
                coeff_text = f
                continue
            sign = 1.0
            body = f
            if k == 0:
                stripped = f.lstrip()
                while stripped and stripped[0] in "+-":
                    if stripped[0] == "-":
                        sign = -sign
                    stripped = stripped[1:].lstrip()
                body = stripped
                if sign < 0:
                    coeff_text = "-1"
            atoms.append(parse_atom(body))
        coeff = _parse_coeff(coeff_text)
        piece = NCPoly.one() * coeff
        for a in atoms:
            piece = piece * a
        out = out + piece
    return out


def _split_factors(term: str):
    factors = []
    depth = 0
    start = 0
    for k, ch in enumerate(term):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "*" and depth == 0:
            # a '*' directly before '(' belongs to a starred atom name
            if k + 1 < len(term) and term[k + 1] == "(":
                continue
            factors.append(term[start:k])
            start = k + 1
    factors.append(term[start:])
    return factors
