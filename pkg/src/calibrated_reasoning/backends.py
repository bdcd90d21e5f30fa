"""Sources of sampled reasoning paths.

``OracleBackend`` is a seeded synthetic model for desk-scale runs: it answers
correctly with a fixed probability and reports yes/no log-odds whose
separation between right and wrong answers is set by ``confidence_fidelity``.

``HttpBackend`` talks to an OpenAI-compatible ``/v1/completions`` endpoint.
It samples paths with one request and scores the yes/no self-evaluation with
a second one, since the confidence must condition on the finished path.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import httpx
import numpy as np

from .aid import AidConfig, repair_text
from .confidence import logprobs_from_log_odds
from .errors import BackendError, HttpError, LogprobsUnavailable, MissingApiKey
from .extraction import extract_boxed, extract_code
from .prompts import render_eval_prompt, render_hint_prompt
from .records import Problem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationResponse:
    sample_index: int
    path_text: str
    logprob_yes: float
    logprob_no: float
    repaired: bool = False


class Backend(Protocol):
    model_name: str
    max_in_flight: int

    def generate(
        self, problem: Problem, sample_indices: Sequence[int], hint: bool = False
    ) -> list[GenerationResponse]: ...


def stable_hash(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


# -- oracle -------------------------------------------------------------------------


@dataclass
class OracleBackend:
    """Deterministic synthetic generator.

    Each (seed, problem id, sample index) triple gets its own random stream,
    so results do not depend on request order or batching. Wrong answers
    reuse one per-problem "common error" with probability
    ``common_error_rate`` and are otherwise unique to the sample, which lets
    tests stage erroneous pluralities for the voting schemes.
    """

    accuracy: float = 0.5
    confidence_fidelity: float = 1.0
    seed: int = 0
    common_error_rate: float = 0.3
    noise_scale: float = 1.0
    model_name: str = "oracle"
    max_in_flight: int = 1

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must be in [0, 1]")
        if self.confidence_fidelity < 0:
            raise ValueError("confidence_fidelity must be >= 0")

    def _wrong_answer(self, problem: Problem, salt) -> str:
        n = stable_hash(self.seed, problem.id, salt) % 100_000
        wrong = str(n)
        if wrong == problem.gold_answer.strip():
            wrong = str(n + 1)
        return wrong

    def sample(self, problem: Problem, k: int, hint: bool = False) -> GenerationResponse:
        rng = np.random.default_rng([self.seed, stable_hash(problem.id), k, int(hint)])
        u_correct, u_common = rng.random(2)
        noise = rng.standard_normal()
        correct = hint or u_correct < self.accuracy
        if correct:
            answer = problem.gold_answer
        elif u_common < self.common_error_rate:
            answer = self._wrong_answer(problem, "common")
        else:
            answer = self._wrong_answer(problem, f"sample-{k}")
        z = self.confidence_fidelity * (2.0 * correct - 1.0) + self.noise_scale * noise
        ly, ln = logprobs_from_log_odds(z)
        text = (
            f"Working through problem {problem.id} step by step.\n"
            f"So, the answer is \\boxed{{{answer}}}"
        )
        return GenerationResponse(k, text, ly, ln)

    def generate(self, problem: Problem, sample_indices: Sequence[int], hint: bool = False):
        return [self.sample(problem, k, hint) for k in sample_indices]


# -- HTTP ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HttpConfig:
    base_url: str
    model_name: str
    api_key_env_var: str | None = "OPENAI_API_KEY"
    decode_temperature: float = 0.7
    max_tokens: int = 1024
    timeout_seconds: float = 60.0
    max_in_flight: int = 4
    # "next_token": read yes/no from the top-k of one next-token distribution
    # "scored": score " yes" and " no" as separate echoed continuations
    confidence_mode: str = "next_token"
    top_logprobs: int = 20
    yes_token: str = "yes"
    no_token: str = "no"
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    aid_repair: bool = True
    aid: AidConfig = field(default_factory=AidConfig)


class HttpBackend:
    def __init__(self, config: HttpConfig, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        self.config = config
        self.model_name = config.model_name
        self.max_in_flight = config.max_in_flight
        self.retry_count = 0
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if config.api_key_env_var:
            key = os.environ.get(config.api_key_env_var)
            if not key:
                raise MissingApiKey(f"environment variable {config.api_key_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout_seconds,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        cfg = self.config
        last: Exception | None = None
        for attempt in range(cfg.max_attempts):
            if attempt:
                self.retry_count += 1
                delay = cfg.backoff_seconds * 2 ** (attempt - 1)
                log.info("retrying completion request (retry %d, sleeping %.2fs)", attempt, delay)
                self._sleep(delay)
            try:
                resp = self._client.post("/v1/completions", json=payload)
            except httpx.TimeoutException as exc:
                last = BackendError(f"request timed out: {exc}")
                continue
            except httpx.TransportError as exc:
                last = BackendError(f"transport error: {exc}")
                continue
            if resp.status_code >= 500:
                last = HttpError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise HttpError(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError:
                raise HttpError(resp.status_code, "response body is not JSON: " + resp.text) from None
        assert last is not None
        raise last

    def _completion_texts(self, prompt: str, n: int, **extra) -> list[str]:
        cfg = self.config
        body = {
            "model": cfg.model_name,
            "prompt": prompt,
            "n": n,
            "temperature": cfg.decode_temperature,
            "max_tokens": cfg.max_tokens,
        }
        body.update(extra)
        data = self._post(body)
        choices = sorted(data.get("choices", []), key=lambda c: c.get("index", 0))
        if len(choices) != n:
            raise BackendError(f"expected {n} choices, got {len(choices)}")
        return [c.get("text", "") for c in choices]

    def _repair(self, prompt: str, text: str) -> tuple[str, bool]:
        """Post-hoc stand-in for in-decoder injection over a remote API."""
        fixed, changed = repair_text(text, self.config.aid)
        if not changed:
            return text, False
        if fixed.endswith(self.config.aid.injection_text):
            # empty box: ask the model to fill it, stopping at the closing brace
            cont = self._completion_texts(
                prompt + fixed,
                1,
                temperature=0.0,
                max_tokens=self.config.aid.max_box_content,
                stop=[self.config.aid.close_token],
            )[0]
            fixed, _ = repair_text(fixed + cont, self.config.aid)
        return fixed, True

    def _answer_of(self, problem: Problem, text: str) -> str:
        if problem.domain_tag == "code":
            return extract_code(text).normalized
        return extract_boxed(text).normalized

    def _yes_no_next_token(self, eval_prompt: str) -> tuple[float, float]:
        cfg = self.config
        data = self._post({
            "model": cfg.model_name,
            "prompt": eval_prompt,
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": cfg.top_logprobs,
        })
        try:
            top = data["choices"][0]["logprobs"]["top_logprobs"][0]
        except (KeyError, IndexError, TypeError):
            top = None
        if not top:
            raise LogprobsUnavailable("endpoint returned no token logprobs")
        yes = [lp for tok, lp in top.items() if tok.strip().lower() == cfg.yes_token]
        no = [lp for tok, lp in top.items() if tok.strip().lower() == cfg.no_token]
        if not yes and not no:
            raise LogprobsUnavailable("neither yes nor no among the returned top logprobs")
        # a label outside the top-k has at most the smallest listed logprob
        floor = min(top.values())
        ly = float(np.logaddexp.reduce(yes)) if yes else floor
        ln = float(np.logaddexp.reduce(no)) if no else floor
        return min(ly, 0.0), min(ln, 0.0)

    def _scored(self, eval_prompt: str, label: str) -> float:
        cfg = self.config
        prompt = eval_prompt + " " + label
        data = self._post({
            "model": cfg.model_name,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        })
        try:
            lp = data["choices"][0]["logprobs"]
            token_lps = lp["token_logprobs"]
            offsets = lp.get("text_offset")
        except (KeyError, IndexError, TypeError):
            raise LogprobsUnavailable("endpoint returned no token logprobs") from None
        if not token_lps:
            raise LogprobsUnavailable("endpoint returned no token logprobs")
        if offsets:
            picked = [v for v, off in zip(token_lps, offsets) if off >= len(eval_prompt) and v is not None]
        else:
            picked = [token_lps[-1]]
        if not picked:
            raise LogprobsUnavailable("label tokens missing from echoed logprobs")
        return float(sum(picked))

    def confidence_logprobs(self, problem: Problem, path: str) -> tuple[float, float]:
        eval_prompt = render_eval_prompt(problem.prompt, path, self._answer_of(problem, path))
        if self.config.confidence_mode == "scored":
            return self._scored(eval_prompt, self.config.yes_token), self._scored(eval_prompt, self.config.no_token)
        return self._yes_no_next_token(eval_prompt)

    def generate(self, problem: Problem, sample_indices: Sequence[int], hint: bool = False):
        prompt = render_hint_prompt(problem.prompt, problem.gold_answer) if hint else problem.prompt
        texts = self._completion_texts(prompt, len(sample_indices))
        out = []
        for k, text in zip(sample_indices, texts):
            repaired = False
            if self.config.aid_repair and problem.domain_tag != "code":
                text, repaired = self._repair(prompt, text)
            ly, ln = self.confidence_logprobs(problem, text)
            if not (math.isfinite(ly) and math.isfinite(ln)):
                raise LogprobsUnavailable("non-finite yes/no logprob")
            out.append(GenerationResponse(k, text, ly, ln, repaired))
        return out
