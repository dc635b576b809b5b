"""
Action blocks in LLM replies.

An actionable reply ends with a block

    <action>
    object: red bottle; on the left, half full
    task: pick_place(bottle, tray)
    confirm: yes
    </action>

`object` is the noun phrase, optionally followed by `;` and comma separated
qualifiers. `task` is one of the task kinds with positional arguments.
When a reply holds several blocks the last one is used. A reply without a
block whose final sentence asks a question is a clarification request.

Parsing never raises: every input maps to an `Instruction`,
`NeedsClarification` or `ParseError`. Error locations are UTF-8 byte
offsets into the reply.
"""
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Tuple, Union

from loguru import logger

from catpose.errors import NonMonotonicRoundsError

TASK_KINDS = ('pick_place', 'handover', 'stack', 'tidy')

OPEN_TAG = '<action>'
CLOSE_TAG = '</action>'
REQUIRED_FIELDS = ('object', 'task', 'confirm')

ERROR_KINDS = ('MissingBlock', 'UnterminatedBlock', 'MissingField',
               'EmptyObject', 'UnknownTask', 'MalformedTask',
               'InvalidValue')

_TASK_NAME_RE = re.compile(r'^[a-z_][a-z0-9_]*$')
_FIELD_RE = re.compile(r'^\s*([A-Za-z_]+)\s*:(.*)$')
_TASK_RE = re.compile(r'^([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?$',
                      re.DOTALL)
_SENTENCE_SPLIT_RE = re.compile(r'(?<=[.!?])\s+')
_CONFIRM_VALUES = {'yes': True, 'true': True, 'no': False, 'false': False}

SYSTEM_PROMPT = """\
You are the dialogue front end of a tabletop manipulation robot.
Talk with the user until you know which object to handle and what to do.
If the request is ambiguous, ask one short question and end your reply with
it. Once the request is clear, end your reply with exactly one block:

<action>
object: <noun phrase>[; <qualifier>, <qualifier>]
task: <kind>(<arg>, <arg>)
confirm: <yes|no>
</action>

<kind> is one of: pick_place, handover, stack, tidy.
Use confirm: yes only after the user agreed to the action.
"""


@dataclass(frozen=True)
class Instruction:
    query: str
    task: str
    args: Tuple[str, ...] = ()
    qualifiers: Tuple[str, ...] = ()
    confirmed: bool = False

    outcome = 'instruction'

    def __post_init__(self):
        object.__setattr__(self, 'args', tuple(self.args))
        object.__setattr__(self, 'qualifiers', tuple(self.qualifiers))
        if not _TASK_NAME_RE.match(self.task):
            raise ValueError(f"Invalid task kind '{self.task}'")
        if self.confirmed and not self.query:
            raise ValueError("A confirmed instruction needs an object query")
        if ';' in self.query:
            raise ValueError("The object query cannot hold ';'")
        values = (self.query,) + self.args + self.qualifiers
        for v in values:
            if (v != v.strip() or OPEN_TAG in v or CLOSE_TAG in v or
                    len(v.splitlines()) > 1):
                raise ValueError(f"Value {v!r} cannot be written to a block")
        for v in self.args + self.qualifiers:
            if not v or ',' in v:
                raise ValueError(f"Invalid list item {v!r}")
        if any(c in a for a in self.args for c in '()'):
            raise ValueError("Task arguments cannot hold parentheses")

    def to_action_block(self):
        obj = self.query
        if self.qualifiers:
            obj += '; ' + ', '.join(self.qualifiers)
        return (f"{OPEN_TAG}\n"
                f"object: {obj}\n"
                f"task: {self.task}({', '.join(self.args)})\n"
                f"confirm: {'yes' if self.confirmed else 'no'}\n"
                f"{CLOSE_TAG}")

    def to_dict(self):
        return {'outcome': self.outcome, 'query': self.query,
                'qualifiers': list(self.qualifiers), 'task': self.task,
                'args': list(self.args), 'confirmed': self.confirmed}


@dataclass(frozen=True)
class NeedsClarification:
    question: str

    outcome = 'clarification'

    def to_dict(self):
        return {'outcome': self.outcome, 'question': self.question}


@dataclass(frozen=True)
class ParseError:
    kind: str
    location: int
    detail: str = ''

    outcome = 'error'

    def to_dict(self):
        return {'outcome': self.outcome, 'kind': self.kind,
                'location': self.location, 'detail': self.detail}


ParseOutcome = Union[Instruction, NeedsClarification, ParseError]


def _byte_offset(text, char_offset):
    return len(text[:char_offset].encode('utf-8', 'surrogatepass'))


def _final_sentence(text):
    sentences = [s for s in _SENTENCE_SPLIT_RE.split(text.strip()) if s]
    return sentences[-1].strip() if sentences else ''


def _split_list(value, sep=','):
    return tuple(v.strip() for v in value.split(sep) if v.strip())


def _parse_block(text, start, end, task_kinds):
    fields = {}
    pos = start
    for line in text[start:end].splitlines(keepends=True):
        m = _FIELD_RE.match(line)
        if m:
            key = m.group(1).lower()
            value = m.group(2)
            offset = pos + m.start(2) + (len(value) - len(value.lstrip()))
            fields[key] = (value.strip(), offset)
        pos += len(line)

    for name in REQUIRED_FIELDS:
        if name not in fields:
            return ParseError('MissingField', _byte_offset(text, start),
                              name)

    confirm, offset = fields['confirm']
    if confirm.lower() not in _CONFIRM_VALUES:
        return ParseError('InvalidValue', _byte_offset(text, offset),
                          f"confirm: {confirm}")
    confirmed = _CONFIRM_VALUES[confirm.lower()]

    obj, offset = fields['object']
    query, _, qualifiers = obj.partition(';')
    query = query.strip()
    if not query and confirmed:
        return ParseError('EmptyObject', _byte_offset(text, offset))

    task, offset = fields['task']
    m = _TASK_RE.match(task)
    if m is None:
        return ParseError('MalformedTask', _byte_offset(text, offset), task)
    kind = m.group(1).lower()
    if kind not in task_kinds:
        return ParseError('UnknownTask', _byte_offset(text, offset),
                          m.group(1))
    args = _split_list(m.group(2) or '')
    if any(c in a for a in args for c in '()'):
        return ParseError('MalformedTask', _byte_offset(text, offset), task)

    return Instruction(query, kind, args, _split_list(qualifiers),
                       confirmed)


def parse_response(model_text, task_kinds=TASK_KINDS) -> ParseOutcome:
    """Parse one model reply. Bytes are decoded as UTF-8 with invalid
    sequences replaced."""
    if isinstance(model_text, (bytes, bytearray)):
        text = bytes(model_text).decode('utf-8', errors='replace')
    else:
        text = str(model_text)

    start = text.rfind(OPEN_TAG)
    if start < 0:
        sentence = _final_sentence(text)
        if '?' in sentence:
            return NeedsClarification(sentence)
        return ParseError('MissingBlock', _byte_offset(text, len(text)))

    body = start + len(OPEN_TAG)
    end = text.find(CLOSE_TAG, body)
    if end < 0:
        return ParseError('UnterminatedBlock', _byte_offset(text, start))

    return _parse_block(text, body, end, task_kinds)


@dataclass(frozen=True)
class LlmExchange:
    round_index: int
    user_text: str
    model_text: str
    timestamp: Optional[str] = None

    def __post_init__(self):
        if int(self.round_index) < 1:
            raise ValueError("round_index should be >= 1")

    def to_dict(self):
        return {'round_index': self.round_index,
                'user_text': self.user_text,
                'model_text': self.model_text,
                'timestamp': self.timestamp}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d['round_index']), d.get('user_text', ''),
                   d['model_text'], d.get('timestamp'))


def load_transcript(filename) -> List[LlmExchange]:
    """JSON lines, one exchange per line. Blank lines are skipped."""
    exchanges = []
    with open(filename, encoding='utf-8') as f:
        for line in f:
            if line.strip():
                exchanges.append(LlmExchange.from_dict(json.loads(line)))
    return exchanges


def write_transcript(exchanges, filename):
    with open(filename, 'w', encoding='utf-8') as f:
        for e in exchanges:
            f.write(json.dumps(e.to_dict(), sort_keys=True) + '\n')
    return Path(filename)


def run_transcript(exchanges: List[LlmExchange],
                   task_kinds=TASK_KINDS) -> List[Tuple[int, ParseOutcome]]:
    outcomes = []
    last = 0
    for e in exchanges:
        if e.round_index <= last:
            raise NonMonotonicRoundsError(
                f"Round {e.round_index} follows round {last}")
        last = e.round_index
        outcomes.append((e.round_index,
                         parse_response(e.model_text, task_kinds)))
    return outcomes


@dataclass(frozen=True)
class Episode:
    first_round: int
    last_round: int
    questions: int


@dataclass
class TranscriptSummary:
    episodes: List[Episode] = field(default_factory=list)
    open_rounds: int = 0
    errors: int = 0

    @property
    def questions_per_instruction(self):
        if not self.episodes:
            return float('nan')
        return sum(e.questions for e in self.episodes) / len(self.episodes)

    def to_dict(self):
        return {'episodes': [e.__dict__ for e in self.episodes],
                'completed_episodes': len(self.episodes),
                'open_rounds': self.open_rounds,
                'errors': self.errors,
                'questions_per_instruction':
                    self.questions_per_instruction}


def summarize_transcript(outcomes) -> TranscriptSummary:
    """Group rounds into episodes closed by a confirmed instruction and
    count the clarification questions asked in each."""
    summary = TranscriptSummary()
    first = None
    questions = 0
    for round_index, outcome in outcomes:
        if first is None:
            first = round_index
        if isinstance(outcome, NeedsClarification):
            questions += 1
        elif isinstance(outcome, ParseError):
            summary.errors += 1
        elif outcome.confirmed:
            summary.episodes.append(Episode(first, round_index, questions))
            first = None
            questions = 0
    if first is not None:
        summary.open_rounds = outcomes[-1][0] - first + 1
    return summary


class InteractionSession:
    """Multi-round dialogue with an LLM client. Each `step` sends the
    conversation so far, parses the reply and records the exchange."""

    def __init__(self, client, system_prompt=SYSTEM_PROMPT,
                 task_kinds=TASK_KINDS):
        self.client = client
        self.system_prompt = system_prompt
        self.task_kinds = task_kinds
        self.history: List[LlmExchange] = []

    def build_prompt(self, user_text):
        parts = [self.system_prompt.rstrip()]
        for e in self.history:
            parts.append(f"User: {e.user_text}")
            parts.append(f"Assistant: {e.model_text}")
        parts.append(f"User: {user_text}")
        parts.append("Assistant:")
        return '\n\n'.join(parts)

    def step(self, user_text, timestamp=None):
        prompt = self.build_prompt(user_text)
        model_text = self.client.send(prompt)
        if timestamp is None:
            timestamp = datetime.now(timezone.utc).isoformat()
        exchange = LlmExchange(len(self.history) + 1, user_text, model_text,
                               timestamp)
        self.history.append(exchange)
        outcome = parse_response(model_text, self.task_kinds)
        logger.debug(f"Round {exchange.round_index}: {outcome.outcome}")
        return exchange, outcome
