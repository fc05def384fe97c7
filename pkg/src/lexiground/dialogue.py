"""Typed dialogue moves, policies, the simulated tutor, grounding, and costs.

A dialogue is a deterministic function of (object, truth, classifier state,
policy settings).  The learner side is parameterized by three binary
factors: who takes initiative (learner or tutor), whether behaviour is
conditioned on confidence bands, and whether elliptical, context-dependent
turns are produced.  The tutor is truthful, helpful, and omniscient.  Agreed
content accumulates in a record type; when the dialogue ends it is ground
into training judgements, and every utterance is charged to a tutor-effort
ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    ATTRIBUTE_CATEGORY,
    Band,
    ClassifierRegistry,
    ConfidenceBands,
    TrainingJudgement,
)
from .records import (
    EMPTY,
    BaseType,
    PredicateType,
    RecordType,
    decompose,
    format_record_type,
    meet,
)

LEARNER = "learner"
TUTOR = "tutor"

COLOUR = "colour"
SHAPE = "shape"
CATEGORY_ORDER = (COLOUR, SHAPE)

TURN_CAP = 20


class ProtocolError(RuntimeError):
    """A move was produced in a state where it is not legal."""


class TemplateError(ValueError):
    """Free text did not match the closed template grammar."""

    def __init__(self, text: str, patterns: tuple[str, ...]):
        super().__init__(f"cannot interpret {text!r}")
        self.patterns = patterns


# ---------------------------------------------------------------------------
# moves


@dataclass(frozen=True)
class AskWh:
    category: str


@dataclass(frozen=True)
class AskPolar:
    attribute: str


@dataclass(frozen=True)
class Inform:
    attributes: tuple[str, ...]


@dataclass(frozen=True)
class Assert:
    attributes: tuple[str, ...]
    hedged: bool = False


@dataclass(frozen=True)
class Confirm:
    pass


@dataclass(frozen=True)
class Reject:
    pass


@dataclass(frozen=True)
class Correct:
    attribute: str


@dataclass(frozen=True)
class ShortAnswer:
    attribute: str


@dataclass(frozen=True)
class Continuation:
    category: str


@dataclass(frozen=True)
class DontKnow:
    pass


@dataclass(frozen=True)
class RequestNext:
    pass


Move = (
    AskWh
    | AskPolar
    | Inform
    | Assert
    | Confirm
    | Reject
    | Correct
    | ShortAnswer
    | Continuation
    | DontKnow
    | RequestNext
)


@dataclass(frozen=True)
class Utterance:
    speaker: str
    move: Move
    words: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.words:
            raise ValueError("utterances carry at least one word")


# ---------------------------------------------------------------------------
# policy settings


@dataclass(frozen=True)
class PolicySettings:
    """One cell of the initiative x uncertainty x context-dependency design."""

    initiative: str = LEARNER
    uncertainty: bool = True
    context_dependency: bool = True
    bands: ConfidenceBands = field(default_factory=ConfidenceBands)

    def __post_init__(self) -> None:
        if self.initiative not in (LEARNER, TUTOR):
            raise ValueError(f"unknown initiative {self.initiative!r}")

    @property
    def name(self) -> str:
        parts = [
            "L" if self.initiative == LEARNER else "T",
            "+UC" if self.uncertainty else "-UC",
            "+CD" if self.context_dependency else "-CD",
        ]
        return "".join(parts)

    @classmethod
    def parse(cls, name: str, bands: ConfidenceBands | None = None) -> "PolicySettings":
        """Build settings from a compact label like ``L+UC-CD``."""
        m = name.strip().upper().replace(" ", "")
        if len(m) != 7 or m[0] not in "LT" or m[1] not in "+-" or m[4] not in "+-" \
                or m[2:4] != "UC" or m[5:] != "CD":
            raise ValueError(f"bad condition name {name!r} (expected e.g. L+UC+CD)")
        return cls(
            initiative=LEARNER if m[0] == "L" else TUTOR,
            uncertainty=m[1] == "+",
            context_dependency=m[4] == "+",
            bands=bands if bands is not None else ConfidenceBands(),
        )


ALL_CONDITIONS = tuple(
    PolicySettings(initiative=i, uncertainty=u, context_dependency=c)
    for i in (LEARNER, TUTOR)
    for u in (True, False)
    for c in (True, False)
)


# ---------------------------------------------------------------------------
# cost ledger


class CostLedger:
    """Cumulative tutor effort.

    Tutor-spoken utterances cost their act price (inform 1 per attribute,
    acknowledge 0.25, correct 1) plus 1 per word produced; learner-spoken
    utterances cost the tutor 0.5 per word parsed.  The learner's own effort
    is not tracked.
    """

    C_INF = 1.0
    C_ACK = 0.25
    C_CRT = 1.0
    C_PARSE_PER_WORD = 0.5
    C_PROD_PER_WORD = 1.0

    def __init__(self) -> None:
        self.cumulative = 0.0

    @classmethod
    def act_cost(cls, move: Move) -> float:
        if isinstance(move, Inform):
            return cls.C_INF * len(move.attributes)
        if isinstance(move, (Confirm, Reject)):
            return cls.C_ACK
        if isinstance(move, Correct):
            return cls.C_CRT
        return 0.0

    @classmethod
    def utterance_cost(cls, utt: Utterance) -> float:
        if utt.speaker == TUTOR:
            return cls.act_cost(utt.move) + cls.C_PROD_PER_WORD * len(utt.words)
        return cls.C_PARSE_PER_WORD * len(utt.words)

    def charge(self, utt: Utterance) -> float:
        delta = self.utterance_cost(utt)
        self.cumulative += delta
        return delta


# ---------------------------------------------------------------------------
# dialogue state


@dataclass(frozen=True)
class Pending:
    """What the next speaker has to address."""

    kind: str  # learner_wh | learner_polar | learner_claim | learner_dontknow | tutor_q
    category: str | None = None
    attributes: tuple[str, ...] = ()


@dataclass
class DialogueState:
    object_id: str
    truth: dict[str, str]
    agreed: RecordType = EMPTY
    rejected: list[str] = field(default_factory=list)
    settled: dict[str, bool] = field(
        default_factory=lambda: {c: False for c in CATEGORY_ORDER}
    )
    self_settled: set[str] = field(default_factory=set)
    pending: Pending | None = None
    transcript: list[Utterance] = field(default_factory=list)
    questions_asked: int = 0
    ended: bool = False

    def all_settled(self) -> bool:
        return all(self.settled.values())

    def unsettled(self) -> list[str]:
        return [c for c in CATEGORY_ORDER if not self.settled[c]]


def atomic_record_type(attribute: str) -> RecordType:
    """The single-predicate record type an attribute word conveys."""
    return RecordType(
        (
            ("x", BaseType("Ind")),
            (attribute, PredicateType(attribute, ("x",))),
        )
    )


def agreed_attributes(state: DialogueState) -> list[str]:
    """Predicate names of the atomic types in the agreed content."""
    out = []
    for atom in decompose(state.agreed):
        for _, ty in atom:
            if isinstance(ty, PredicateType):
                out.append(ty.pred)
    return out


# ---------------------------------------------------------------------------
# surface realization: a closed, frozen template table


def _is_shape(attribute: str) -> bool:
    return ATTRIBUTE_CATEGORY.get(attribute) == SHAPE


def _attr_phrase(attribute: str) -> tuple[str, ...]:
    return ("a", attribute) if _is_shape(attribute) else (attribute,)


def _attrs_phrase(attributes: tuple[str, ...]) -> tuple[str, ...]:
    # colour-then-shape surface order; shapes carry the article
    colours = tuple(a for a in attributes if not _is_shape(a))
    shapes = tuple(a for a in attributes if _is_shape(a))
    words = colours + shapes
    return (("a",) + words) if shapes else words


def realize(move: Move, state: DialogueState, settings: PolicySettings) -> tuple[str, ...]:
    """Words for a move.  Elliptical forms require context_dependency on."""
    cd = settings.context_dependency
    answering = state.pending is not None and state.pending.kind == "tutor_q"

    if isinstance(move, AskWh):
        if cd and state.questions_asked > 0:
            return ("and", "the", move.category)
        return ("what", move.category, "is", "this")
    if isinstance(move, Continuation):
        if not cd:
            raise ProtocolError("continuations need context dependency on")
        return ("so", "this", "is", "a")
    if isinstance(move, AskPolar):
        return ("is", "it") + _attr_phrase(move.attribute)
    if isinstance(move, Inform):
        phrase = _attrs_phrase(move.attributes)
        return phrase if cd else ("it", "is") + phrase
    if isinstance(move, Assert):
        phrase = _attrs_phrase(move.attributes)
        if move.hedged:
            return ("errm", "maybe") + phrase
        if answering:
            return phrase if cd else ("it", "is") + phrase
        return phrase if cd else ("this", "is") + phrase
    if isinstance(move, ShortAnswer):
        if not cd:
            raise ProtocolError("short answers need context dependency on")
        return _attr_phrase(move.attribute)
    if isinstance(move, Confirm):
        return ("yes",)
    if isinstance(move, Reject):
        return ("no",)
    if isinstance(move, Correct):
        phrase = _attr_phrase(move.attribute)
        return ("no",) + phrase if cd else ("no", "it", "is") + phrase
    if isinstance(move, DontKnow):
        return ("i", "dont", "know")
    if isinstance(move, RequestNext):
        return ("next", "please")
    raise ProtocolError(f"no template for {move!r}")


def move_label(move: Move) -> str:
    """Compact, parseable name used in transcript logs."""
    if isinstance(move, AskWh):
        return f"AskWh({move.category})"
    if isinstance(move, AskPolar):
        return f"AskPolar({move.attribute})"
    if isinstance(move, Inform):
        return f"Inform({'+'.join(move.attributes)})"
    if isinstance(move, Assert):
        inner = "+".join(move.attributes) + (",hedged" if move.hedged else "")
        return f"Assert({inner})"
    if isinstance(move, Confirm):
        return "Confirm"
    if isinstance(move, Reject):
        return "Reject"
    if isinstance(move, Correct):
        return f"Correct({move.attribute})"
    if isinstance(move, ShortAnswer):
        return f"ShortAnswer({move.attribute})"
    if isinstance(move, Continuation):
        return f"Continuation({move.category})"
    if isinstance(move, DontKnow):
        return "DontKnow"
    if isinstance(move, RequestNext):
        return "RequestNext"
    raise ProtocolError(f"unlabelled move {move!r}")


def parse_move_label(label: str) -> Move:
    name, _, rest = label.partition("(")
    arg = rest[:-1] if rest.endswith(")") else rest
    if name == "AskWh":
        return AskWh(arg)
    if name == "AskPolar":
        return AskPolar(arg)
    if name == "Inform":
        return Inform(tuple(arg.split("+")))
    if name == "Assert":
        hedged = arg.endswith(",hedged")
        if hedged:
            arg = arg[: -len(",hedged")]
        return Assert(tuple(arg.split("+")), hedged)
    if name == "Confirm":
        return Confirm()
    if name == "Reject":
        return Reject()
    if name == "Correct":
        return Correct(arg)
    if name == "ShortAnswer":
        return ShortAnswer(arg)
    if name == "Continuation":
        return Continuation(arg)
    if name == "DontKnow":
        return DontKnow()
    if name == "RequestNext":
        return RequestNext()
    raise ValueError(f"unknown move label {label!r}")


# ---------------------------------------------------------------------------
# policies


def learner_act(
    state: DialogueState,
    registry: ClassifierRegistry,
    features: np.ndarray,
    settings: PolicySettings,
) -> Move:
    """The learner's next move.

    Confident categories under the uncertainty policy are settled silently
    as a side effect: the learner trusts its own label and does not bother
    the tutor about that category.
    """
    if state.ended:
        raise ProtocolError("dialogue already ended")

    if settings.initiative == TUTOR:
        pending = state.pending
        if pending is None or pending.kind != "tutor_q":
            raise ProtocolError("learner answers only pending tutor questions")
        category = pending.category
        if not registry.known(category):
            # no words for this category yet; nothing to guess with
            return DontKnow()
        v = registry.verdict(category, features)
        if v.attribute in state.rejected:
            # best guess was already turned down without a correction
            return DontKnow()
        if settings.uncertainty:
            if v.band is Band.UNKNOWN:
                return DontKnow()
            if v.band is Band.UNSURE:
                return Assert((v.attribute,), hedged=True)
        if settings.context_dependency:
            return ShortAnswer(v.attribute)
        return Assert((v.attribute,), hedged=False)

    # learner initiative
    if settings.uncertainty:
        for category in state.unsettled():
            v = registry.verdict(category, features)
            if v.band is Band.UNKNOWN or v.attribute in state.rejected:
                return AskWh(category)
            if v.band is Band.UNSURE:
                return AskPolar(v.attribute)
            state.settled[category] = True
            state.self_settled.add(category)
        return RequestNext()

    unsettled = state.unsettled()
    if not unsettled:
        return RequestNext()
    best: list[str] = []
    for category in unsettled:
        v = registry.verdict(category, features)
        if v.attribute is None or v.attribute in state.rejected:
            # cannot assert before a usable word of the category is known
            return AskWh(category)
        best.append(v.attribute)
    return Assert(tuple(best), hedged=False)


def tutor_act(state: DialogueState, settings: PolicySettings) -> Move:
    """The simulated tutor: truthful, helpful, omniscient."""
    if state.ended:
        raise ProtocolError("dialogue already ended")
    pending = state.pending
    truth = state.truth

    if pending is not None:
        if pending.kind in ("learner_wh", "learner_dontknow"):
            return Inform((truth[pending.category],))
        if pending.kind == "learner_polar":
            attribute = pending.attributes[0]
            category = ATTRIBUTE_CATEGORY[attribute]
            if truth[category] == attribute:
                return Confirm()
            return Correct(truth[category])
        if pending.kind == "learner_claim":
            for category in CATEGORY_ORDER:
                for attribute in pending.attributes:
                    if ATTRIBUTE_CATEGORY[attribute] == category \
                            and truth[category] != attribute:
                        return Correct(truth[category])
            return Confirm()
        raise ProtocolError(f"tutor cannot address {pending.kind}")

    if settings.initiative != TUTOR:
        raise ProtocolError("nothing pending and tutor lacks initiative")
    unsettled = state.unsettled()
    if not unsettled:
        raise ProtocolError("nothing left to ask")
    category = unsettled[0]
    if settings.context_dependency and state.questions_asked % 2 == 1:
        return Continuation(category)
    return AskWh(category)


# ---------------------------------------------------------------------------
# interpretation: how a move changes the shared state


def _agree(state: DialogueState, registry: ClassifierRegistry | None, attribute: str) -> None:
    category = ATTRIBUTE_CATEGORY[attribute]
    if registry is not None:
        registry.ensure(attribute, category)
    state.agreed = meet(state.agreed, atomic_record_type(attribute))
    state.settled[category] = True


def _reject(state: DialogueState, attribute: str) -> None:
    if attribute not in state.rejected:
        state.rejected.append(attribute)


def interpret(
    state: DialogueState,
    utt: Utterance,
    registry: ClassifierRegistry | None = None,
) -> None:
    """Fold one utterance into the dialogue state.

    Tutor informs and corrections are self-ratifying; learner claims enter
    the agreed content only once the tutor confirms them.  The registry, if
    given, learns of attribute words on first mention.
    """
    move = utt.move
    if isinstance(move, AskWh):
        kind = "learner_wh" if utt.speaker == LEARNER else "tutor_q"
        state.pending = Pending(kind, category=move.category)
        state.questions_asked += 1
    elif isinstance(move, Continuation):
        state.pending = Pending("tutor_q", category=move.category)
        state.questions_asked += 1
    elif isinstance(move, AskPolar):
        state.pending = Pending(
            "learner_polar",
            category=ATTRIBUTE_CATEGORY[move.attribute],
            attributes=(move.attribute,),
        )
    elif isinstance(move, (Assert, ShortAnswer)):
        attributes = (
            (move.attribute,) if isinstance(move, ShortAnswer) else move.attributes
        )
        state.pending = Pending("learner_claim", attributes=attributes)
    elif isinstance(move, DontKnow):
        if state.pending is None or state.pending.kind != "tutor_q":
            raise ProtocolError("dont-know answers a tutor question")
        state.pending = Pending("learner_dontknow", category=state.pending.category)
    elif isinstance(move, Inform):
        for attribute in move.attributes:
            _agree(state, registry, attribute)
        state.pending = None
    elif isinstance(move, Confirm):
        if state.pending is None or state.pending.kind not in (
            "learner_polar",
            "learner_claim",
        ):
            raise ProtocolError("nothing to confirm")
        for attribute in state.pending.attributes:
            _agree(state, registry, attribute)
        state.pending = None
    elif isinstance(move, Reject):
        if state.pending is None or state.pending.kind not in (
            "learner_polar",
            "learner_claim",
        ):
            raise ProtocolError("nothing to reject")
        for attribute in state.pending.attributes:
            _reject(state, attribute)
        state.pending = None
    elif isinstance(move, Correct):
        if state.pending is None or state.pending.kind not in (
            "learner_polar",
            "learner_claim",
        ):
            raise ProtocolError("nothing to correct")
        category = ATTRIBUTE_CATEGORY[move.attribute]
        for attribute in state.pending.attributes:
            if ATTRIBUTE_CATEGORY[attribute] == category:
                _reject(state, attribute)
        _agree(state, registry, move.attribute)
        state.pending = None
    elif isinstance(move, RequestNext):
        state.ended = True
        state.pending = None
    else:
        raise ProtocolError(f"cannot interpret {move!r}")

    state.transcript.append(utt)
    if state.all_settled():
        state.ended = True


# ---------------------------------------------------------------------------
# grounding agreed content into training judgements


def ground_judgements(
    state: DialogueState,
    features: np.ndarray,
    registry: ClassifierRegistry,
    implicit_negatives: bool = True,
) -> list[TrainingJudgement]:
    """Training data carried by a finished dialogue.

    One positive per agreed atomic type; one negative per explicitly
    rejected attribute; optionally, negatives for the same-category
    alternatives of every agreed attribute (the known inventory at the time
    of grounding).
    """
    if not state.ended:
        raise ProtocolError("grounding happens after the dialogue ends")
    positives = agreed_attributes(state)
    out = [TrainingJudgement(features, a, True) for a in positives]
    seen_negative: set[str] = set()
    for attribute in state.rejected:
        if attribute in positives or attribute in seen_negative:
            continue
        seen_negative.add(attribute)
        out.append(TrainingJudgement(features, attribute, False))
    if implicit_negatives:
        for positive in positives:
            for other in registry.known(ATTRIBUTE_CATEGORY[positive]):
                if other in positives or other in seen_negative:
                    continue
                seen_negative.add(other)
                out.append(TrainingJudgement(features, other, False))
    return out


# ---------------------------------------------------------------------------
# running a full dialogue


@dataclass(frozen=True)
class DialogueResult:
    state: DialogueState
    judgements: list[TrainingJudgement]
    cost_delta: float
    utterance_costs: tuple[float, ...]
    agreed_after: tuple[str, ...]


def next_speaker(state: DialogueState, settings: PolicySettings) -> str:
    """Whose move it is: whoever a pending item addresses, else initiative."""
    if state.pending is not None:
        return LEARNER if state.pending.kind == "tutor_q" else TUTOR
    return LEARNER if settings.initiative == LEARNER else TUTOR


def run_dialogue(
    object_id: str,
    features: np.ndarray,
    truth: dict[str, str],
    registry: ClassifierRegistry,
    settings: PolicySettings,
    ledger: CostLedger | None = None,
    implicit_negatives: bool = True,
) -> DialogueResult:
    """One complete tutoring dialogue about one object.

    The registry is consulted for confidence but not trained; the caller
    applies the returned judgements.  Charges accrue to ``ledger`` when
    given, else to a throwaway one, and the per-dialogue delta is returned.
    """
    if ledger is None:
        ledger = CostLedger()
    state = DialogueState(object_id=object_id, truth=dict(truth))
    start = ledger.cumulative
    costs: list[float] = []
    agreed_after: list[str] = []

    for _ in range(TURN_CAP):
        if state.ended:
            break
        speaker = next_speaker(state, settings)
        if speaker == LEARNER:
            move = learner_act(state, registry, features, settings)
        else:
            move = tutor_act(state, settings)
        utt = Utterance(speaker, move, realize(move, state, settings))
        costs.append(ledger.charge(utt))
        interpret(state, utt, registry)
        agreed_after.append(format_record_type(state.agreed))
    else:
        raise ProtocolError(f"dialogue exceeded {TURN_CAP} turns")

    judgements = ground_judgements(state, features, registry, implicit_negatives)
    return DialogueResult(
        state,
        judgements,
        ledger.cumulative - start,
        tuple(costs),
        tuple(agreed_after),
    )


# ---------------------------------------------------------------------------
# transcript logging and replay


def transcript_lines(result: DialogueResult) -> list[str]:
    """Frozen log format: speaker, move, words, agreed type, running cost.

    One line per turn; the agreed column is the state just after that turn
    and the cost column is cumulative within the dialogue.
    """
    lines = []
    running = 0.0
    for utt, delta, agreed in zip(
        result.state.transcript, result.utterance_costs, result.agreed_after
    ):
        running += delta
        lines.append(
            "\t".join(
                (
                    utt.speaker,
                    move_label(utt.move),
                    " ".join(utt.words),
                    agreed,
                    f"{running:.2f}",
                )
            )
        )
    return lines


def replay_cost(lines: list[str]) -> float:
    """Recompute the dialogue cost from a transcript log independently."""
    total = 0.0
    for line in lines:
        speaker, label, words, _agreed, logged = line.split("\t")
        move = parse_move_label(label)
        utt = Utterance(speaker, move, tuple(words.split(" ")))
        total += CostLedger.utterance_cost(utt)
        if abs(total - float(logged)) > 0.005:
            raise ValueError(
                f"replayed cost {total} disagrees with logged {logged}"
            )
    return total


# ---------------------------------------------------------------------------
# parsing human tutor text (service mode)

TUTOR_PATTERNS = (
    "yes",
    "no",
    "no it is <attribute>",
    "no <attribute>",
    "it is <attribute>",
    "<attribute>",
    "what colour is this",
    "what shape is this",
    "and the colour",
    "and the shape",
    "so this is a",
)

_CATEGORY_WORDS = {"colour": COLOUR, "color": COLOUR, "shape": SHAPE}


def parse_tutor_text(text: str, state: DialogueState) -> Move:
    """Map free tutor text onto a move via the closed template grammar.

    Matching is case- and punctuation-insensitive; known attribute words are
    extracted wherever they appear.  Unrecognizable input raises
    ``TemplateError`` carrying the accepted pattern list.
    """
    cleaned = "".join(
        ch if ch.isalnum() or ch.isspace() else " " for ch in text.lower()
    )
    tokens = cleaned.split()
    if not tokens:
        raise TemplateError(text, TUTOR_PATTERNS)
    attrs = tuple(t for t in tokens if t in ATTRIBUTE_CATEGORY)
    cats = [_CATEGORY_WORDS[t] for t in tokens if t in _CATEGORY_WORDS]

    if tokens[0] == "yes":
        return Confirm()
    if tokens[0] == "no":
        if attrs:
            return Correct(attrs[0])
        return Reject()
    if tokens[0] in ("what", "and") and cats:
        return AskWh(cats[0])
    if tokens[:3] == ["so", "this", "is"]:
        unsettled = state.unsettled()
        if not unsettled:
            raise TemplateError(text, TUTOR_PATTERNS)
        return Continuation(unsettled[0])
    if attrs:
        return Inform(attrs)
    raise TemplateError(text, TUTOR_PATTERNS)
