"""Language-to-code client contract with post-hoc validate-and-retry.

`llm_parse` sends a few-shot prompt to a completion client and accepts the
reply only if it parses and typechecks; otherwise it retries with an error
note appended, up to `max_retries` attempts, logging every attempt.  The
returned program is therefore always type-valid — constrained decoding is
approximated at the interface, not inside the decoder.

Clients implement one method, ``complete(prompt: str) -> str``.  The default
is a deterministic replay stub reading a JSONL fixture mapping utterances to
completion sequences; setting the NS3D_LLM_ENDPOINT environment variable
swaps in a live HTTP endpoint ({"prompt": ...} -> {"completion": ...}).
"""
from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources

from . import dsl
from .vocab import Vocabulary

ENDPOINT_ENV_VAR = "NS3D_LLM_ENDPOINT"
DEFAULT_MAX_RETRIES = 3
_FIXTURE_PACKAGE = "refexec.fixtures"
PROMPT_EXAMPLES_FIXTURE = "prompt_examples.json"
REPLAY_FIXTURE = "llm_replay.jsonl"


class TransportError(RuntimeError):
    def __init__(self, message: str, log: "ParseAttemptLog | None" = None):
        super().__init__(message)
        self.log = log


class ValidationExhaustedError(RuntimeError):
    def __init__(self, message: str, log: "ParseAttemptLog"):
        super().__init__(message)
        self.log = log


@dataclass
class ParseAttempt:
    index: int
    raw_output: str
    verdict: str          # "syntax-error" | "type-error" | "ok"
    detail: str | None = None

    def to_json(self) -> dict:
        return {"index": self.index, "raw_output": self.raw_output,
                "verdict": self.verdict, "detail": self.detail}


@dataclass
class ParseAttemptLog:
    utterance: str
    attempts: list[ParseAttempt] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.attempts) and self.attempts[-1].verdict == "ok"

    def to_json(self) -> dict:
        return {"utterance": self.utterance,
                "attempts": [a.to_json() for a in self.attempts]}


def load_prompt_examples(path: str | None = None) -> list[tuple[str, str]]:
    """(utterance, program-text) pairs for the few-shot prompt."""
    if path is None:
        raw = (resources.files(_FIXTURE_PACKAGE) / PROMPT_EXAMPLES_FIXTURE).read_text()
    else:
        with open(path) as fh:
            raw = fh.read()
    pairs = json.loads(raw)
    return [(item["utterance"], item["program"]) for item in pairs]


def build_prompt(examples: list[tuple[str, str]], utterance: str,
                 feedback: str | None = None) -> str:
    if not examples:
        raise ValueError("prompt_examples must be nonempty")
    lines = ["Translate each utterance into a program.", ""]
    for example_utterance, program in examples:
        lines.append(f'utterance: "{example_utterance}"')
        lines.append(f"program: {program}")
        lines.append("")
    if feedback:
        lines.append(f"note: the previous answer was invalid ({feedback}); "
                     "reply with one corrected program only.")
    lines.append(f'utterance: "{utterance}"')
    lines.append("program:")
    return "\n".join(lines)


class ReplayClient:
    """Deterministic stub: per-utterance completion sequences from JSONL.

    Each fixture line is {"utterance": ..., "completions": [...]}; calls for
    one utterance consume its list in order (the last entry repeats once the
    list is exhausted).  The utterance is read back out of the prompt's final
    quoted line.
    """

    def __init__(self, path: str | None = None):
        if path is None:
            raw = (resources.files(_FIXTURE_PACKAGE) / REPLAY_FIXTURE).read_text()
        else:
            with open(path) as fh:
                raw = fh.read()
        self._completions: dict[str, list[str]] = {}
        for line in raw.splitlines():
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            self._completions[row["utterance"]] = list(row["completions"])
        self._cursor: dict[str, int] = {}

    @staticmethod
    def _utterance_from_prompt(prompt: str) -> str:
        quoted = [line for line in prompt.splitlines()
                  if line.startswith('utterance: "')]
        if not quoted:
            raise TransportError("prompt carries no utterance line")
        return quoted[-1][len('utterance: "'):-1]

    def complete(self, prompt: str) -> str:
        utterance = self._utterance_from_prompt(prompt)
        if utterance not in self._completions:
            raise TransportError(f"no replay entry for utterance {utterance!r}")
        options = self._completions[utterance]
        i = self._cursor.get(utterance, 0)
        self._cursor[utterance] = i + 1
        return options[min(i, len(options) - 1)]

    @property
    def utterances(self) -> list[str]:
        return list(self._completions)


class HttpClient:
    """POSTs {"prompt": ...} and expects {"completion": ...} back."""

    def __init__(self, endpoint: str | None = None, timeout: float = 30.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV_VAR)
        if not self.endpoint:
            raise ValueError(f"no endpoint given and {ENDPOINT_ENV_VAR} unset")
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=body,
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, json.JSONDecodeError, OSError) as exc:
            raise TransportError(f"completion request failed: {exc}") from exc
        if "completion" not in payload:
            raise TransportError(f"malformed response: {payload!r}")
        return str(payload["completion"])


def default_client():
    if os.environ.get(ENDPOINT_ENV_VAR):
        return HttpClient()
    return ReplayClient()


def llm_parse(utterance: str, prompt_examples: list[tuple[str, str]],
              client, vocabulary: Vocabulary,
              max_retries: int = DEFAULT_MAX_RETRIES) -> tuple[dsl.Node, ParseAttemptLog]:
    """Parse via the client; the returned program always typechecks.

    Raises ValidationExhaustedError (with the full attempt log) after
    max_retries invalid completions, and TransportError on client failure.
    """
    if max_retries < 1:
        raise ValueError("max_retries must be >= 1")
    log = ParseAttemptLog(utterance=utterance)
    feedback = None
    for attempt in range(1, max_retries + 1):
        prompt = build_prompt(prompt_examples, utterance, feedback)
        try:
            raw = client.complete(prompt)
        except TransportError as exc:
            exc.log = log
            raise
        try:
            program = dsl.parse_program(raw.strip())
        except dsl.ParseError as exc:
            log.attempts.append(ParseAttempt(attempt, raw, "syntax-error", str(exc)))
            feedback = f"syntax error: {exc}"
            continue
        try:
            dsl.typecheck(dsl.lower_anchor(program, vocabulary), vocabulary)
        except (dsl.TypecheckError, dsl.LoweringError) as exc:
            log.attempts.append(ParseAttempt(attempt, raw, "type-error", str(exc)))
            feedback = f"type error: {exc}"
            continue
        log.attempts.append(ParseAttempt(attempt, raw, "ok"))
        return program, log
    raise ValidationExhaustedError(
        f"no valid program after {max_retries} attempts for {utterance!r}", log)
