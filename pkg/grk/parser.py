"""
Rule-based extraction of tagged completions.

A completion carries three sections, each exactly once and in this order::

    <think> ... </think> <response> ... </response> <answer> ... </answer>

Grammars (ASCII digits, keywords case-insensitive, blanks = spaces or tabs)::

    node             = digit , { digit } ;
    connectivity_step = node , [blanks] , "->" , [blanks] , node ;
    shortest_step    = node , [blanks] , "->" , [blanks] , node , [blanks] , ":" , [blanks] ,
                       weight , [blanks] , ";" , [blanks] , "total" , [blanks] , "=" ,
                       [blanks] , total ;
    yes_no_answer    = "yes" | "no" ;
    path_answer      = "path" , [blanks] , "=" , [blanks] , node ,
                       { [blanks] , "->" , [blanks] , node }- , [blanks] , ";" , [blanks] ,
                       "length" , [blanks] , "=" , [blanks] , digit , { digit } ;

Nothing here raises on completion text: malformed input is reported through
``format_ok`` and :class:`ParseDiagnostic` entries.
"""

import re
from enum import Enum
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, Field

_WHITESPACE = " \t\n\r\x0b\x0c"
_TAGS = ("think", "response", "answer")

# Longer digit runs are left unparsed instead of reaching int().
_NUMBER = r"[0-9]{1,18}"

_CONNECTIVITY_STEP_RE = re.compile(rf"^({_NUMBER})[ \t]*->[ \t]*({_NUMBER})$", re.ASCII)
_SHORTEST_STEP_RE = re.compile(
    rf"^({_NUMBER})[ \t]*->[ \t]*({_NUMBER})[ \t]*:[ \t]*({_NUMBER})[ \t]*;[ \t]*total[ \t]*=[ \t]*({_NUMBER})$",
    re.ASCII | re.IGNORECASE,
)
_YES_NO_RE = re.compile(r"^(yes|no)$", re.ASCII | re.IGNORECASE)
_PATH_ANSWER_RE = re.compile(
    rf"^path[ \t]*=[ \t]*({_NUMBER}(?:[ \t]*->[ \t]*{_NUMBER})+)[ \t]*;[ \t]*length[ \t]*=[ \t]*({_NUMBER})$",
    re.ASCII | re.IGNORECASE,
)
_PLAN_STEP_RE = re.compile(rf"^step({_NUMBER})$", re.ASCII | re.IGNORECASE)


class TaskKind(str, Enum):
    CONNECTIVITY = "connectivity"
    SHORTEST_PATH = "shortest_path"


class DiagnosticCode(str, Enum):
    MISSING_TAG = "missing_tag"
    DUPLICATE_TAG = "duplicate_tag"
    TAG_ORDER = "tag_order"
    EMPTY_ANSWER = "empty_answer"
    BAD_STEP_LINE = "bad_step_line"
    BAD_ANSWER_GRAMMAR = "bad_answer_grammar"


class ParseDiagnostic(BaseModel):
    code: DiagnosticCode
    line: Optional[int] = None
    detail: str = ""


class ParsedResponse(BaseModel):
    """
    The tagged sections of one completion.

    ``step_lines`` holds the nonempty, trimmed lines of the response section.
    ``response_found`` / ``answer_found`` say whether the section could be extracted at
    all (exactly one well-ordered tag pair), independently of ``format_ok``.
    """

    think: str = ""
    step_lines: list[str] = Field(default_factory=list)
    answer_raw: str = ""
    format_ok: bool = False
    response_found: bool = False
    answer_found: bool = False


# ---------------------
# Steps
# ---------------------

class ConnectivityStep(BaseModel):
    type: Literal["connectivity"] = "connectivity"
    u: int = Field(ge=0)
    v: int = Field(ge=0)

    def render(self) -> str:
        return f"{self.u} -> {self.v}"


class ShortestPathStep(BaseModel):
    type: Literal["shortest_path"] = "shortest_path"
    u: int = Field(ge=0)
    v: int = Field(ge=0)
    weight: int = Field(gt=0)
    total: int = Field(gt=0)

    def render(self) -> str:
        return f"{self.u} -> {self.v} : {self.weight} ; total={self.total}"


class UnparsedStep(BaseModel):
    type: Literal["unparsed"] = "unparsed"
    raw: str

    def render(self) -> str:
        return self.raw


Step = Annotated[Union[ConnectivityStep, ShortestPathStep, UnparsedStep], Field(discriminator="type")]


# ---------------------
# Answers
# ---------------------

class ConnectivityAnswer(BaseModel):
    type: Literal["connectivity"] = "connectivity"
    claim: bool

    def render(self) -> str:
        return "yes" if self.claim else "no"


class ShortestPathAnswer(BaseModel):
    type: Literal["shortest_path"] = "shortest_path"
    path: list[int] = Field(min_length=2)
    length: int = Field(ge=0)

    def render(self) -> str:
        return f"path={'->'.join(str(v) for v in self.path)} ; length={self.length}"


class UnparseableAnswer(BaseModel):
    type: Literal["unparseable"] = "unparseable"
    raw: str = ""


AnswerPayload = Annotated[
    Union[ConnectivityAnswer, ShortestPathAnswer, UnparseableAnswer], Field(discriminator="type")
]


class ParsedCompletion(BaseModel):
    sections: ParsedResponse
    diagnostics: list[ParseDiagnostic]
    steps: list[Step]
    answer: AnswerPayload


# ---------------------
# Operations
# ---------------------

def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _find_all(text: str, needle: str) -> list[int]:
    positions = []
    pos = text.find(needle)
    while pos != -1:
        positions.append(pos)
        pos = text.find(needle, pos + len(needle))
    return positions


def extract_sections(completion: str) -> tuple[ParsedResponse, list[ParseDiagnostic]]:
    diagnostics: list[ParseDiagnostic] = []
    spans: dict[str, tuple[int, int, str]] = {}

    for tag in _TAGS:
        open_tag, close_tag = f"<{tag}>", f"</{tag}>"
        opens = _find_all(completion, open_tag)
        closes = _find_all(completion, close_tag)
        if not opens or not closes:
            missing = [t for t, found in ((open_tag, opens), (close_tag, closes)) if not found]
            diagnostics.append(
                ParseDiagnostic(code=DiagnosticCode.MISSING_TAG, detail=f"missing {' and '.join(missing)}")
            )
            continue
        if len(opens) > 1 or len(closes) > 1:
            extra = opens[1] if len(opens) > 1 else closes[1]
            diagnostics.append(
                ParseDiagnostic(
                    code=DiagnosticCode.DUPLICATE_TAG,
                    line=_line_of(completion, extra),
                    detail=f"{open_tag} x{len(opens)}, {close_tag} x{len(closes)}",
                )
            )
            continue
        start, end = opens[0] + len(open_tag), closes[0]
        if end < start:
            diagnostics.append(
                ParseDiagnostic(
                    code=DiagnosticCode.TAG_ORDER,
                    line=_line_of(completion, end),
                    detail=f"{close_tag} precedes {open_tag}",
                )
            )
            continue
        spans[tag] = (opens[0], end + len(close_tag), completion[start:end].strip(_WHITESPACE))

    for first, second in zip(_TAGS, _TAGS[1:]):
        if first in spans and second in spans and spans[first][1] > spans[second][0]:
            diagnostics.append(
                ParseDiagnostic(
                    code=DiagnosticCode.TAG_ORDER,
                    line=_line_of(completion, spans[second][0]),
                    detail=f"<{second}> section must follow </{first}>",
                )
            )

    if "answer" in spans and not spans["answer"][2]:
        diagnostics.append(
            ParseDiagnostic(
                code=DiagnosticCode.EMPTY_ANSWER,
                line=_line_of(completion, spans["answer"][0]),
                detail="<answer> section is empty",
            )
        )

    step_lines: list[str] = []
    if "response" in spans:
        stripped = (line.strip(_WHITESPACE) for line in spans["response"][2].split("\n"))
        step_lines = [line for line in stripped if line]

    parsed = ParsedResponse(
        think=spans["think"][2] if "think" in spans else "",
        step_lines=step_lines,
        answer_raw=spans["answer"][2] if "answer" in spans else "",
        format_ok=not diagnostics,
        response_found="response" in spans,
        answer_found="answer" in spans,
    )
    return parsed, diagnostics


def parse_step(kind: TaskKind, line: str) -> Step:
    text = line.strip(_WHITESPACE)
    if kind is TaskKind.CONNECTIVITY:
        match = _CONNECTIVITY_STEP_RE.match(text)
        if match:
            return ConnectivityStep(u=int(match.group(1)), v=int(match.group(2)))
    else:
        match = _SHORTEST_STEP_RE.match(text)
        if match:
            u, v, weight, total = (int(g) for g in match.groups())
            if weight > 0 and total > 0:
                return ShortestPathStep(u=u, v=v, weight=weight, total=total)
    return UnparsedStep(raw=line)


def parse_steps(kind: TaskKind, step_lines: list[str]) -> list[Step]:
    """One step per nonempty line; nonconforming lines become :class:`UnparsedStep`."""
    return [parse_step(kind, line) for line in step_lines if line.strip(_WHITESPACE)]


def parse_answer(kind: TaskKind, answer_raw: str) -> AnswerPayload:
    text = answer_raw.strip(_WHITESPACE)
    if kind is TaskKind.CONNECTIVITY:
        match = _YES_NO_RE.match(text)
        if match:
            return ConnectivityAnswer(claim=match.group(1).lower() == "yes")
    else:
        match = _PATH_ANSWER_RE.match(text)
        if match:
            path = [int(node) for node in re.split(r"[ \t]*->[ \t]*", match.group(1))]
            return ShortestPathAnswer(path=path, length=int(match.group(2)))
    return UnparseableAnswer(raw=answer_raw)


def parse_response(kind: TaskKind, completion: str) -> ParsedCompletion:
    """Sections, steps and answer in one pass, with grammar diagnostics appended."""
    sections, diagnostics = extract_sections(completion)
    steps = parse_steps(kind, sections.step_lines)
    for index, step in enumerate(steps, start=1):
        if isinstance(step, UnparsedStep):
            diagnostics.append(
                ParseDiagnostic(code=DiagnosticCode.BAD_STEP_LINE, line=index, detail=step.raw)
            )
    answer = parse_answer(kind, sections.answer_raw)
    if isinstance(answer, UnparseableAnswer) and sections.answer_raw:
        diagnostics.append(
            ParseDiagnostic(code=DiagnosticCode.BAD_ANSWER_GRAMMAR, detail=sections.answer_raw)
        )
    return ParsedCompletion(sections=sections, diagnostics=diagnostics, steps=steps, answer=answer)


def parse_step_sequence(text: str) -> Optional[list[int]]:
    """
    Parse an arrow-linked plan such as ``step3->step1->step2`` into ``[3, 1, 2]``.
    The literal ``UNKNOWN`` yields an empty plan; anything else malformed yields None.
    """
    stripped = text.strip(_WHITESPACE)
    if stripped.upper() == "UNKNOWN":
        return []
    sequence = []
    for item in stripped.split("->"):
        match = _PLAN_STEP_RE.match(item.strip(_WHITESPACE))
        if match is None:
            return None
        sequence.append(int(match.group(1)))
    return sequence
