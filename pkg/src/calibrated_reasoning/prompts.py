"""Prompt templates shared by the HTTP backend and the dataset builder.

The self-evaluation prompt conditions on the question, the reasoning path and
the proposed answer, then asks a yes/no question. Changing the wording means
bumping ``EVAL_TEMPLATE_VERSION`` so exported datasets stay traceable.
"""

from __future__ import annotations

EVAL_TEMPLATE_VERSION = "v1"

EVAL_TEMPLATE = (
    "Question: {question}\n"
    "\n"
    "Reasoning: {path}\n"
    "\n"
    "Proposed answer: {answer}\n"
    "\n"
    "Is the answer correct? Reply yes or no.\n"
    "Answer:"
)

HINT_TEMPLATE = "{question}\n(Hint: the correct answer is {gold}.)"


def render_eval_prompt(question: str, path: str, answer: str) -> str:
    return EVAL_TEMPLATE.format(question=question, path=path.strip(), answer=answer)


def render_hint_prompt(question: str, gold: str) -> str:
    return HINT_TEMPLATE.format(question=question, gold=gold)
