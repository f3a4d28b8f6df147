"""Few-shot prompting of an external language model.

Prompts follow a fixed four-segment composition (preamble, source
introduction, gene introduction, output instruction) around a block of
numbered content lines, ten cells per prompt. Replies are parsed as indexed
``<index>: sensitive|resistant`` lines; anything else is a recorded failure,
never a silently imputed label.
"""

from __future__ import annotations

import abc
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import EvaluationError, ParameterError, ResponseParseError
from .evaluation import MetricSet, compute_metrics
from .tokens import top_k_gene_names

# The literal schema token the output instruction must show the model.
ANSWER_SCHEMA_MARKER = "<index>:"

BATCH_SIZE = 10
TOP_GENES = 10

_ANSWER_LINE = re.compile(r"^\s*(\d+)\s*:\s*([A-Za-z]+)")


@dataclass(frozen=True)
class PromptTemplate:
    """Four fixed text segments wrapped around the per-cell content block."""

    pre: str
    source_intro: str
    gene_intro: str
    post: str

    def __post_init__(self):
        for name in ("pre", "source_intro", "gene_intro", "post"):
            if not getattr(self, name):
                raise ParameterError(f"template segment {name!r} must be non-empty")
        if ANSWER_SCHEMA_MARKER not in self.post:
            raise ParameterError(
                f"the post segment must contain the answer schema marker "
                f"{ANSWER_SCHEMA_MARKER!r} so replies stay machine-parseable"
            )


DEFAULT_TEMPLATE = PromptTemplate(
    pre=(
        "You are an expert in cancer pharmacogenomics. For each cell below, "
        "judge whether it is sensitive or resistant to the treatment."
    ),
    source_intro="The cells were sampled from the following source:",
    gene_intro=(
        "Each numbered line lists the ten most highly expressed genes of one "
        "cell, strongest first:"
    ),
    post=(
        "Answer with exactly one line per cell in the form "
        "`<index>: sensitive` or `<index>: resistant`, keeping the same "
        "numbering and adding nothing else."
    ),
)


@dataclass(frozen=True)
class PromptItem:
    cell_id: str
    genes: tuple[str, ...]

    def __post_init__(self):
        if len(self.genes) > TOP_GENES:
            raise ParameterError(
                f"prompt item for {self.cell_id!r} lists {len(self.genes)} genes, "
                f"limit is {TOP_GENES}"
            )


@dataclass(frozen=True)
class PromptBatch:
    """Up to ten cells asked about in one model call."""

    items: tuple[PromptItem, ...]
    source: str

    def __post_init__(self):
        if len(self.items) > BATCH_SIZE:
            raise ParameterError(
                f"a prompt batch holds at most {BATCH_SIZE} cells, got {len(self.items)}"
            )

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class ParsedResponse:
    """Binary labels aligned to batch order, with the raw reply retained."""

    labels: np.ndarray
    raw_reply: str


def build_prompt(template: PromptTemplate, source: str, batch: PromptBatch) -> str:
    """Compose the prompt string; byte-stable for fixed inputs."""
    if len(batch) == 0:
        raise ParameterError("cannot build a prompt for an empty batch")
    lines = [
        f"{i}: {', '.join(item.genes)}"
        for i, item in enumerate(batch.items, start=1)
    ]
    parts = [template.pre, f"{template.source_intro} {source}", template.gene_intro]
    parts.extend(lines)
    parts.append(template.post)
    return "\n".join(parts)


def batch_cells(dataset: Dataset, size: int = BATCH_SIZE) -> list[PromptBatch]:
    """Chunk cells into consecutive batches in dataset order."""
    if size < 1:
        raise ParameterError(f"batch size must be >= 1, got {size}")
    size = min(size, BATCH_SIZE)
    source = describe_source(dataset)
    batches = []
    for start in range(0, len(dataset.cells), size):
        chunk = dataset.cells[start:start + size]
        items = tuple(
            PromptItem(c.cell_id, tuple(top_k_gene_names(c, dataset.vocabulary, TOP_GENES)))
            for c in chunk
        )
        batches.append(PromptBatch(items=items, source=source))
    return batches


def describe_source(dataset: Dataset) -> str:
    m = dataset.manifest
    return f"{m.tissue} tissue, {m.cancer_type}, treated with {m.therapy_type} ({m.regimen})"


def parse_response(reply: str, expected_n: int) -> ParsedResponse:
    """Extract indexed sensitive/resistant lines, tolerating surrounding prose."""
    if expected_n < 1:
        raise ParameterError(f"expected_n must be >= 1, got {expected_n}")
    found: dict[int, int] = {}
    for line in reply.splitlines():
        match = _ANSWER_LINE.match(line)
        if match is None:
            continue  # prose, headers, blank lines
        index = int(match.group(1))
        word = match.group(2).lower()
        if word not in ("sensitive", "resistant"):
            raise ResponseParseError(
                f"line {line!r} answers with {word!r}, expected sensitive or resistant",
                raw_reply=reply,
            )
        if index in found:
            raise ResponseParseError(
                f"index {index} answered more than once", raw_reply=reply
            )
        if not 1 <= index <= expected_n:
            raise ResponseParseError(
                f"index {index} is outside 1..{expected_n}", raw_reply=reply
            )
        found[index] = 1 if word == "sensitive" else 0
    missing = [i for i in range(1, expected_n + 1) if i not in found]
    if missing:
        raise ResponseParseError(
            f"reply answered {len(found)} of {expected_n} cells; missing indices "
            f"{missing}", raw_reply=reply,
        )
    labels = np.array([found[i] for i in range(1, expected_n + 1)], dtype=np.int64)
    return ParsedResponse(labels=labels, raw_reply=reply)


@dataclass(frozen=True)
class RetryPolicy:
    """Bounded retries with exponential backoff, then log-and-skip."""

    attempts: int = 3
    backoff: float = 0.5  # seconds before attempt 2, doubled each retry

    def __post_init__(self):
        if self.attempts < 1:
            raise ParameterError(f"attempts must be >= 1, got {self.attempts}")
        if self.backoff < 0:
            raise ParameterError(f"backoff must be >= 0, got {self.backoff}")


class LlmClient(abc.ABC):
    """Transport contract; send is the only side-effecting call."""

    @abc.abstractmethod
    def send(self, prompt: str) -> str:
        """Return the model's reply text for one prompt."""


class HttpLlmClient(LlmClient):
    """JSON-over-HTTP chat client; credentials come from the environment."""

    def __init__(self, endpoint: str, model_name: str,
                 api_key_env: str = "CELLRX_LLM_API_KEY", timeout: float = 60.0):
        if timeout <= 0:
            raise ParameterError(f"timeout must be positive, got {timeout}")
        self.endpoint = endpoint
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.timeout = timeout

    def send(self, prompt: str) -> str:
        import requests

        key = os.environ.get(self.api_key_env)
        if not key:
            raise ParameterError(
                f"environment variable {self.api_key_env} is unset; "
                "it must hold the API credential"
            )
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
        }
        resp = requests.post(
            self.endpoint, json=payload,
            headers={"Authorization": f"Bearer {key}"},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        body = resp.json()
        return body["choices"][0]["message"]["content"]


@dataclass(frozen=True)
class BatchFailure:
    batch_index: int
    cell_ids: tuple[str, ...]
    reason: str
    attempts: int


@dataclass
class FewshotResult:
    metrics: MetricSet
    failures: list[BatchFailure]
    n_scored: int
    n_skipped: int
    replies: list[str] = field(repr=False, default_factory=list)


def evaluate_fewshot(
    dataset: Dataset,
    client: LlmClient,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    retry: RetryPolicy = RetryPolicy(),
    max_in_flight: int = 1,
    audit_path=None,
) -> FewshotResult:
    """Prompt the model over all cells and score parsed answers.

    Failed batches (transport or parse, after bounded retries) are excluded
    from the metrics and reported in the failure log; silently imputing
    labels for them would bias the scores.
    """
    labels = dataset.labels_array()  # raises DataError on unlabeled cells
    if max_in_flight < 1:
        raise ParameterError(f"max_in_flight must be >= 1, got {max_in_flight}")
    batches = batch_cells(dataset)
    if not batches:
        raise EvaluationError("dataset has no cells to evaluate")

    def ask(batch: PromptBatch):
        prompt = build_prompt(template, batch.source, batch)
        last_error = "unknown"
        for attempt in range(1, retry.attempts + 1):
            if attempt > 1 and retry.backoff > 0:
                time.sleep(retry.backoff * 2 ** (attempt - 2))
            try:
                reply = client.send(prompt)
                return parse_response(reply, len(batch)), attempt, prompt
            except ResponseParseError as exc:
                last_error = f"parse: {exc}"
            except Exception as exc:  # transport faults from any client
                last_error = f"send: {exc}"
        return last_error, retry.attempts, prompt

    if max_in_flight == 1:
        outcomes = [ask(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            outcomes = list(pool.map(ask, batches))

    predicted: list[np.ndarray] = []
    truth: list[np.ndarray] = []
    failures: list[BatchFailure] = []
    replies: list[str] = []
    audit_lines: list[str] = []
    offset = 0
    for i, (batch, (outcome, attempts, prompt)) in enumerate(zip(batches, outcomes)):
        n = len(batch)
        if isinstance(outcome, ParsedResponse):
            predicted.append(outcome.labels.astype(np.float64))
            truth.append(labels[offset:offset + n])
            replies.append(outcome.raw_reply)
            audit_lines.append(f"--- batch {i} prompt ---\n{prompt}\n"
                               f"--- batch {i} reply ---\n{outcome.raw_reply}\n")
        else:
            failures.append(BatchFailure(
                batch_index=i,
                cell_ids=tuple(item.cell_id for item in batch.items),
                reason=outcome,
                attempts=attempts,
            ))
            audit_lines.append(f"--- batch {i} prompt ---\n{prompt}\n"
                               f"--- batch {i} FAILED: {outcome}\n")
        offset += n

    if audit_path is not None:
        with open(audit_path, "a", encoding="utf-8") as fh:
            fh.writelines(audit_lines)

    if not predicted:
        raise EvaluationError(
            f"all {len(batches)} prompt batches failed; see the failure log"
        )
    probs = np.concatenate(predicted)
    y = np.concatenate(truth)
    metrics = compute_metrics(probs, y)
    return FewshotResult(
        metrics=metrics,
        failures=failures,
        n_scored=int(y.size),
        n_skipped=int(labels.size - y.size),
        replies=replies,
    )
