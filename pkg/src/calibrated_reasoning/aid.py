"""Adaptive injection decoding: a per-sequence constraint that guarantees every
finished sequence carries a closed ``\\boxed{...}`` answer.

The machine sees one proposed token per decoding step and answers with one
:class:`Action`:

``pass``      emit the proposed token
``force``     emit a different token chosen by the machine
``finish``    emit EOS and mark the sequence finished
``suppress``  emit nothing; the proposal is masked out and the next one is
              considered (used for stop tokens while no answer box exists)

Rules, highest priority first:

1. a finished sequence accepts nothing (``StepAfterFinish``)
2. mid-injection: force the next injection token; after the last one the
   answer box is open
3. (carry-over) a box closed by force is followed by a forced finish, and a
   forced close keeps forcing ``}`` until the braces balance
4. EOS proposed with no box yet: start the injection
5. soft length limit reached with no box yet: start the injection
6. EOS proposed inside an open box: force ``}``
7. the proposal would leave no room to close the box within
   ``max_box_content`` tokens: force ``}``
8. stop token with no finished box: suppress
9. EOS after a closed box: finish
10. otherwise pass, tracking ``\\boxed{`` and brace depth in the emitted text

Box content is counted in tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .errors import InputError, StepAfterFinish, StreamExhausted

PASS = "pass"
FORCE = "force"
FINISH = "finish"
SUPPRESS = "suppress"

DEFAULT_INJECTION = ("\n", "So", ",", " the", " answer", " is", " ", "\\boxed{")


@dataclass(frozen=True)
class AidConfig:
    injection_tokens: tuple[str, ...] = DEFAULT_INJECTION
    close_token: str = "}"
    eos_token: str = "<eos>"
    max_len: int = 1024
    soft_margin: int = 150
    max_box_content: int = 40
    stop_tokens: frozenset[str] = field(default_factory=frozenset)
    box_open_text: str = "\\boxed{"

    def __post_init__(self):
        if not self.injection_tokens:
            raise InputError("injection_tokens must be non-empty")
        if not "".join(self.injection_tokens).endswith(self.box_open_text):
            raise InputError("the injection phrase must end with the box opener")
        if not 0 <= self.soft_margin < self.max_len:
            raise InputError("need 0 <= soft_margin < max_len")
        if self.max_box_content < 1:
            raise InputError("max_box_content must be >= 1")
        object.__setattr__(self, "stop_tokens", frozenset(self.stop_tokens))

    @property
    def injection_text(self) -> str:
        return "".join(self.injection_tokens)


class AidState(NamedTuple):
    position: int = 0
    is_injecting: bool = False
    injection_step: int = 0
    has_boxed: bool = False
    box_open: bool = False
    box_content_len: int = 0
    finished: bool = False
    box_depth: int = 0
    closing: bool = False
    terminate_pending: bool = False
    tail: str = ""


class Action(NamedTuple):
    kind: str
    token: str | None


def _scan(state: AidState, text: str, opener: str) -> AidState:
    """Advance box bookkeeping over emitted text; counts one content token."""
    box_open = state.box_open
    depth = state.box_depth
    has_boxed = state.has_boxed
    content = state.box_content_len
    tail = state.tail
    counted = False
    for ch in text:
        if box_open:
            if ch == "}":
                depth -= 1
                if depth == 0:
                    box_open = False
                    has_boxed = True
                    tail = ""
                    continue
            elif ch == "{":
                depth += 1
            if not counted:
                content += 1
                counted = True
        else:
            tail = (tail + ch)[-len(opener):]
            if tail == opener:
                box_open = True
                depth = 1
                content = 0
                counted = False
                tail = ""
    return state._replace(
        box_open=box_open, box_depth=depth, has_boxed=has_boxed, box_content_len=content, tail=tail
    )


def _emit(state: AidState, token: str, config: AidConfig) -> AidState:
    return _scan(state, token, config.box_open_text)._replace(position=state.position + 1)


def _start_injection(state: AidState, config: AidConfig) -> tuple[Action, AidState]:
    return _inject(state._replace(is_injecting=True, injection_step=0), config)


def _inject(state: AidState, config: AidConfig) -> tuple[Action, AidState]:
    tok = config.injection_tokens[state.injection_step]
    new = _emit(state, tok, config)
    step = state.injection_step + 1
    if step == len(config.injection_tokens):
        # the phrase ends with the opener; make sure the box is open even if
        # earlier text left the scanner mid-match
        if not new.box_open:
            new = new._replace(box_open=True, box_depth=1, box_content_len=0, tail="")
        new = new._replace(is_injecting=False, injection_step=step)
    else:
        new = new._replace(injection_step=step)
    return Action(FORCE, tok), new


def _force_close(state: AidState, config: AidConfig) -> tuple[Action, AidState]:
    tok = config.close_token
    new = _emit(state, tok, config)
    if new.box_open:
        new = new._replace(closing=True)
    else:
        new = new._replace(closing=False, terminate_pending=True)
    return Action(FORCE, tok), new


def _room_after(state: AidState, token: str, config: AidConfig) -> bool:
    """Whether emitting ``token`` keeps the box closable within the limit."""
    after = _scan(state, token, config.box_open_text)
    if after.box_open:
        return after.box_content_len + after.box_depth - 1 <= config.max_box_content
    return after.box_content_len <= config.max_box_content


def step(state: AidState, proposed: str, config: AidConfig) -> tuple[Action, AidState]:
    """One decoding step. Pure: the result depends only on the arguments."""
    if state.finished:
        raise StepAfterFinish("sequence already finished")
    if state.is_injecting:
        return _inject(state, config)
    if state.terminate_pending:
        return Action(FINISH, config.eos_token), state._replace(
            finished=True, terminate_pending=False, position=state.position + 1
        )
    if state.closing:
        return _force_close(state, config)

    eos = proposed == config.eos_token
    no_box = not state.has_boxed and not state.box_open
    if eos and no_box:
        return _start_injection(state, config)
    if no_box and state.position >= config.max_len - config.soft_margin:
        return _start_injection(state, config)
    if state.box_open:
        if eos:
            return _force_close(state, config)
        if not _room_after(state, proposed, config):
            return _force_close(state, config)
    if proposed in config.stop_tokens and not state.has_boxed:
        return Action(SUPPRESS, None), state
    if eos:
        return Action(FINISH, config.eos_token), state._replace(finished=True, position=state.position + 1)
    return Action(PASS, proposed), _emit(state, proposed, config)


@dataclass
class AidResult:
    tokens: list[str]
    actions: list[Action]
    complete: bool
    final_state: AidState

    @property
    def n_forced(self) -> int:
        return sum(a.kind == FORCE for a in self.actions)

    def text(self) -> str:
        """Decoded text without the trailing EOS."""
        toks = self.tokens[:-1] if self.complete else self.tokens
        return "".join(toks)


def run_to_completion(stream: Iterable[str], config: AidConfig, strict: bool = False) -> AidResult:
    """Drive the machine with a stream of proposals until it finishes.

    If the stream runs dry first the result is flagged ``complete=False``,
    or :class:`StreamExhausted` is raised when ``strict``.
    """
    state = AidState()
    tokens: list[str] = []
    actions: list[Action] = []
    for proposed in stream:
        action, state = step(state, proposed, config)
        actions.append(action)
        if action.token is not None:
            tokens.append(action.token)
        if state.finished:
            return AidResult(tokens, actions, True, state)
    if strict:
        raise StreamExhausted(tokens)
    return AidResult(tokens, actions, False, state)


class AidBatch:
    """Independent machines for a batch of sequences, keyed by sequence id."""

    def __init__(self, seq_ids: Iterable, config: AidConfig):
        self.config = config
        self.states: dict = {s: AidState() for s in seq_ids}

    @property
    def finished_mask(self) -> dict:
        return {s: st.finished for s, st in self.states.items()}

    def step(self, proposals: Mapping) -> dict:
        """Advance every sequence that received a proposal; finished ones are skipped."""
        out = {}
        for sid, tok in proposals.items():
            st = self.states[sid]
            if st.finished:
                continue
            out[sid], self.states[sid] = step(st, tok, self.config)
        return out


def repair_text(text: str, config: AidConfig) -> tuple[str, bool]:
    """Post-hoc repair of a finished generation that cannot run under the machine.

    An unclosed final box is closed with the missing braces; text with no box
    at all gets the injection phrase appended, leaving an empty box the caller
    must fill (for instance with a continuation request). This approximates
    in-decoder enforcement and is flagged as such by the second return value.
    """
    from .extraction import boxed_spans

    spans = boxed_spans(text)
    if spans and spans[-1][2]:
        return text, False
    if spans:
        start = spans[-1][0]
        depth = 1
        for ch in text[start:]:
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
        return text + config.close_token * depth, True
    return text + config.injection_text, True
