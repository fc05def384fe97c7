"""Record types and the operations the agent reasons with.

A record type is an ordered sequence of labelled fields.  Field types come in
four kinds: opaque base types (``Ind``), singleton types pinning a value
(manifest fields), predicate types whose arguments point at earlier fields,
and nested record types.  Subtyping, meet (type conjunction), decomposition
into atomic one-predicate types, and query answering against a visual context
are all defined over this algebra.

Everything here is immutable and pure; instances can be shared freely across
threads.  The textual serialization (``format_record_type`` /
``parse_record_type``) is canonical and round-trippable and is the form used
in transcripts, logs, and the service API.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Optional, Union


class RecordTypeError(ValueError):
    """A structurally malformed record type, record, or query."""


class MeetConflict(RecordTypeError):
    """Two record types assign unrelated types to the same label."""


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _check_ident(name: str, what: str) -> str:
    if not isinstance(name, str) or not _IDENT.match(name):
        raise RecordTypeError(f"{what} must be an identifier, got {name!r}")
    return name


@dataclass(frozen=True)
class BaseType:
    """An opaque named type such as ``Ind``."""

    name: str

    def __post_init__(self) -> None:
        _check_ident(self.name, "base type name")


@dataclass(frozen=True)
class SingletonType:
    """The type with exactly one witness: a manifest field ``l=v : T``."""

    base: "Ty"
    witness: "Value"


@dataclass(frozen=True)
class PredicateType:
    """A dependent type ``p(l1, ..., ln)`` over earlier labels."""

    pred: str
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        _check_ident(self.pred, "predicate name")
        for a in self.args:
            _check_ident(a, "predicate argument label")


@dataclass(frozen=True)
class AnyType:
    """Unconstrained placeholder: the hole of a wh-question.

    Every type is a subtype of ``AnyType``; substituting a concrete type for
    the hole is how queries get answered.
    """


@dataclass(frozen=True)
class Proof:
    """Opaque evidence that a predicate holds of particular values."""

    pred: str
    args: tuple["Value", ...]

    def __post_init__(self) -> None:
        _check_ident(self.pred, "proof predicate name")


class RecordType:
    """An ordered sequence of (label, type) fields.

    Well-formedness: labels are unique identifiers, and each predicate
    field's arguments refer to labels that appear earlier.  The empty record
    type is valid and is the top of the subtype order.
    """

    __slots__ = ("fields", "_index")

    fields: tuple[tuple[str, "Ty"], ...]

    def __init__(self, fields: tuple[tuple[str, "Ty"], ...] = ()) -> None:
        fields = tuple((label, ty) for label, ty in fields)
        seen: dict[str, "Ty"] = {}
        for label, ty in fields:
            _check_ident(label, "field label")
            if label in seen:
                raise RecordTypeError(f"duplicate label {label!r}")
            if isinstance(ty, PredicateType):
                for a in ty.args:
                    if a not in seen:
                        raise RecordTypeError(
                            f"predicate field {label!r} refers to {a!r} "
                            "which does not precede it"
                        )
            seen[label] = ty
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "_index", seen)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("RecordType is immutable")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RecordType) and self.fields == other.fields

    def __hash__(self) -> int:
        return hash(self.fields)

    def __repr__(self) -> str:
        return f"RecordType({format_record_type(self)})"

    def __iter__(self) -> Iterator[tuple[str, "Ty"]]:
        return iter(self.fields)

    def __len__(self) -> int:
        return len(self.fields)

    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.fields)

    def get(self, label: str) -> Optional["Ty"]:
        return self._index.get(label)

    def has(self, label: str) -> bool:
        return label in self._index

    def with_field(self, label: str, ty: "Ty") -> "RecordType":
        """A copy with the type at ``label`` replaced."""
        if not self.has(label):
            raise RecordTypeError(f"no field labelled {label!r}")
        return RecordType(
            tuple((l, ty if l == label else t) for l, t in self.fields)
        )


Ty = Union[BaseType, SingletonType, PredicateType, RecordType, AnyType]

EMPTY = RecordType()


class Record:
    """An ordered sequence of (label, value) entries; a potential witness."""

    __slots__ = ("entries", "_index")

    entries: tuple[tuple[str, "Value"], ...]

    def __init__(self, entries: tuple[tuple[str, "Value"], ...] = ()) -> None:
        entries = tuple((label, value) for label, value in entries)
        seen: dict[str, "Value"] = {}
        for label, value in entries:
            _check_ident(label, "record label")
            if label in seen:
                raise RecordTypeError(f"duplicate label {label!r}")
            seen[label] = value
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_index", seen)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("Record is immutable")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Record) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __repr__(self) -> str:
        return f"Record({format_record(self)})"

    def get(self, label: str) -> Optional["Value"]:
        return self._index.get(label)

    def has(self, label: str) -> bool:
        return label in self._index


Value = Union[str, Record, Proof]


@dataclass(frozen=True)
class AtomicJudgement:
    """One object judged as a (non-)instance of an atomic record type."""

    object_id: str
    rtype: RecordType
    positive: bool

    def __post_init__(self) -> None:
        preds = [l for l, t in self.rtype if isinstance(t, PredicateType)]
        if len(preds) != 1:
            raise RecordTypeError(
                f"judgement type must contain exactly one predicate field, "
                f"found {len(preds)}"
            )

    @property
    def attribute(self) -> str:
        for _, ty in self.rtype:
            if isinstance(ty, PredicateType):
                return ty.pred
        raise AssertionError("unreachable: validated in __post_init__")


# ---------------------------------------------------------------------------
# subtyping and witnessing

def ty_subtype(t1: Ty, t2: Ty) -> bool:
    """Field-type subtyping: is ``t1`` at least as specific as ``t2``?

    Singletons are subtypes of their base; predicate types match by name and
    exact argument labels (no alpha-renaming across differently labelled
    entity fields); nested record types recurse.  ``AnyType`` is top.
    """
    if t1 == t2:
        return True
    if isinstance(t2, AnyType):
        return True
    if isinstance(t1, SingletonType):
        return ty_subtype(t1.base, t2)
    if isinstance(t1, RecordType) and isinstance(t2, RecordType):
        return is_subtype(t1, t2)
    return False


def is_subtype(r1: RecordType, r2: RecordType) -> bool:
    """True iff every field of ``r2`` is matched in ``r1`` by a subtype."""
    for label, t2 in r2:
        t1 = r1.get(label)
        if t1 is None or not ty_subtype(t1, t2):
            return False
    return True


def _value_of_type(value: "Value", ty: Ty, rec: Record) -> bool:
    if isinstance(ty, AnyType):
        return True
    if isinstance(ty, SingletonType):
        return value == ty.witness and _value_of_type(value, ty.base, rec)
    if isinstance(ty, PredicateType):
        if not isinstance(value, Proof) or value.pred != ty.pred:
            return False
        resolved = []
        for a in ty.args:
            if not rec.has(a):
                return False
            resolved.append(rec.get(a))
        return value.args == tuple(resolved)
    if isinstance(ty, RecordType):
        return isinstance(value, Record) and witnesses(value, ty)
    # base types are opaque: any atomic value inhabits them
    return isinstance(value, (str, Record, Proof))


def witnesses(rec: Record, rt: RecordType) -> bool:
    """True iff ``rec`` supplies a suitably typed value for every field.

    Singleton fields require value equality; predicate fields require a
    proof for that predicate applied to the record's own values at the
    argument labels.
    """
    for label, ty in rt:
        if not rec.has(label):
            return False
        if not _value_of_type(rec.get(label), ty, rec):
            return False
    return True


# ---------------------------------------------------------------------------
# meet and decomposition

def _is_dependent(ty: Ty) -> bool:
    return isinstance(ty, PredicateType)


def meet(t1: RecordType, t2: RecordType) -> RecordType:
    """Type conjunction: the most general common refinement of ``t1``, ``t2``.

    On a label collision the more specific type is kept; unrelated colliding
    types raise :class:`MeetConflict`.  The result is in canonical field
    order: entity (non-predicate) fields first, then predicate fields, each
    group in first-seen order.
    """
    merged: dict[str, Ty] = {}
    order_entity: list[str] = []
    order_dep: list[str] = []
    for label, ty in tuple(t1) + tuple(t2):
        if label not in merged:
            merged[label] = ty
            (order_dep if _is_dependent(ty) else order_entity).append(label)
            continue
        prev = merged[label]
        if ty_subtype(prev, ty):
            continue
        if ty_subtype(ty, prev):
            merged[label] = ty
        else:
            raise MeetConflict(
                f"label {label!r} carries incompatible types "
                f"{format_type(prev)} and {format_type(ty)}"
            )
    return RecordType(
        tuple((l, merged[l]) for l in order_entity + order_dep)
    )


def _referenced_fields(t: RecordType, args: tuple[str, ...]) -> tuple[str, ...]:
    # transitive closure over argument labels, in field order
    wanted = set(args)
    changed = True
    while changed:
        changed = False
        for label, ty in t:
            if label in wanted and isinstance(ty, PredicateType):
                for a in ty.args:
                    if a not in wanted:
                        wanted.add(a)
                        changed = True
    return tuple(l for l, _ in t.fields if l in wanted)


def decompose(t: RecordType) -> tuple[RecordType, ...]:
    """Split ``t`` into atomic types, one per predicate field.

    Each atomic type carries one predicate field plus the fields it
    (transitively) depends on.  The meet of all returned types equals ``t``
    restricted to its predicate fields and their dependencies.  Entity-only
    record types decompose to the empty tuple.  The order is deterministic
    (field appearance) and the result is duplicate-free.
    """
    atoms: list[RecordType] = []
    for label, ty in t:
        if not isinstance(ty, PredicateType):
            continue
        keep = set(_referenced_fields(t, ty.args)) | {label}
        atoms.append(
            RecordType(tuple((l, ft) for l, ft in t if l in keep))
        )
    out: list[RecordType] = []
    for a in atoms:
        if a not in out:
            out.append(a)
    return tuple(out)


# ---------------------------------------------------------------------------
# query answering

class NoAnswer:
    """Returned (as an empty candidate tuple) when no substitution fits."""


def answer_query(
    question: RecordType,
    hole: Optional[str],
    context: RecordType,
) -> Union[bool, tuple[Ty, ...]]:
    """Answer a question record type against a visual context.

    With ``hole`` naming a field of ``question``, candidate types are drawn
    from the context's fields and substituted at the hole; those making the
    context a subtype of the question are answers.  All maximally specific
    candidates are returned (deterministic order); the caller selects among
    ties.  An empty tuple means no answer.

    With ``hole=None`` the question is polar and the result is the boolean
    ``is_subtype(context, question)``.
    """
    if hole is None:
        return is_subtype(context, question)
    if not question.has(hole):
        raise RecordTypeError(f"question has no field labelled {hole!r}")
    candidates: list[Ty] = []
    for _, ty in context:
        if isinstance(ty, AnyType) or ty in candidates:
            continue
        if is_subtype(context, question.with_field(hole, ty)):
            candidates.append(ty)
    maximal = [
        c for c in candidates
        if not any(o != c and ty_subtype(o, c) for o in candidates)
    ]
    return tuple(maximal)


# ---------------------------------------------------------------------------
# textual serialization

def format_type(ty: Ty) -> str:
    if isinstance(ty, BaseType):
        return ty.name
    if isinstance(ty, AnyType):
        return "?"
    if isinstance(ty, PredicateType):
        return f"{ty.pred}({', '.join(ty.args)})"
    if isinstance(ty, SingletonType):
        # singletons render through their field sugar; standalone form:
        return f"{format_type(ty.base)}={format_value(ty.witness)}"
    if isinstance(ty, RecordType):
        return format_record_type(ty)
    raise RecordTypeError(f"unknown type {ty!r}")


def format_record_type(rt: RecordType) -> str:
    parts = []
    for label, ty in rt:
        if isinstance(ty, SingletonType):
            parts.append(
                f"{label}={format_value(ty.witness)} : {format_type(ty.base)}"
            )
        else:
            parts.append(f"{label} : {format_type(ty)}")
    return "{" + ", ".join(parts) + "}"


def format_value(v: "Value") -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, Proof):
        return f"{v.pred}({', '.join(format_value(a) for a in v.args)})"
    if isinstance(v, Record):
        return format_record(v)
    raise RecordTypeError(f"unknown value {v!r}")


def format_record(rec: Record) -> str:
    return "[" + ", ".join(
        f"{label}={format_value(v)}" for label, v in rec.entries
    ) + "]"


class _Parser:
    """Recursive-descent parser for the serialization grammar."""

    _TOKEN = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*|[{}\[\](),:=?])")

    def __init__(self, text: str) -> None:
        self.tokens: list[str] = []
        pos = 0
        while pos < len(text):
            m = self._TOKEN.match(text, pos)
            if m is None:
                if text[pos:].strip():
                    raise RecordTypeError(
                        f"unexpected character at {text[pos:pos + 10]!r}"
                    )
                break
            self.tokens.append(m.group(1))
            pos = m.end()
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise RecordTypeError("unexpected end of input")
        self.i += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise RecordTypeError(f"expected {tok!r}, got {got!r}")

    def record_type(self) -> RecordType:
        self.expect("{")
        fields: list[tuple[str, Ty]] = []
        if self.peek() == "}":
            self.next()
            return RecordType(())
        while True:
            label = self.next()
            _check_ident(label, "field label")
            if self.peek() == "=":
                self.next()
                witness = self.value()
                self.expect(":")
                base = self.type_()
                fields.append((label, SingletonType(base, witness)))
            else:
                self.expect(":")
                fields.append((label, self.type_()))
            if self.peek() == ",":
                self.next()
                continue
            self.expect("}")
            return RecordType(tuple(fields))

    def type_(self) -> Ty:
        tok = self.peek()
        if tok == "{":
            return self.record_type()
        if tok == "?":
            self.next()
            return AnyType()
        name = self.next()
        _check_ident(name, "type name")
        if self.peek() == "(":
            self.next()
            args: list[str] = []
            if self.peek() != ")":
                while True:
                    args.append(_check_ident(self.next(), "argument"))
                    if self.peek() == ",":
                        self.next()
                        continue
                    break
            self.expect(")")
            return PredicateType(name, tuple(args))
        return BaseType(name)

    def value(self) -> "Value":
        tok = self.peek()
        if tok == "[":
            return self.record()
        name = self.next()
        _check_ident(name, "value")
        if self.peek() == "(":
            self.next()
            args: list["Value"] = []
            if self.peek() != ")":
                while True:
                    args.append(self.value())
                    if self.peek() == ",":
                        self.next()
                        continue
                    break
            self.expect(")")
            return Proof(name, tuple(args))
        return name

    def record(self) -> Record:
        self.expect("[")
        entries: list[tuple[str, "Value"]] = []
        if self.peek() == "]":
            self.next()
            return Record(())
        while True:
            label = self.next()
            _check_ident(label, "record label")
            self.expect("=")
            entries.append((label, self.value()))
            if self.peek() == ",":
                self.next()
                continue
            self.expect("]")
            return Record(tuple(entries))

    def finish(self) -> None:
        if self.peek() is not None:
            raise RecordTypeError(f"trailing input at {self.peek()!r}")


def parse_record_type(text: str) -> RecordType:
    p = _Parser(text)
    rt = p.record_type()
    p.finish()
    return rt


def parse_record(text: str) -> Record:
    p = _Parser(text)
    rec = p.record()
    p.finish()
    return rec
